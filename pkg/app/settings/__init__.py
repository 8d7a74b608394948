from .base import *
from .identification import *
