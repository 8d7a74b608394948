from .base import env

# Conic solver backends, tried in order until one returns a usable answer
SOLVER_BACKENDS = env.list("SOLVER_BACKENDS", ["CLARABEL", "SCS"])
SOLVER_MAX_ITERS = env.int("SOLVER_MAX_ITERS", 20000)
SOLVER_FEAS_TOL = env.float("SOLVER_FEAS_TOL", 1e-6)
SOLVER_VERBOSE = env.bool("SOLVER_VERBOSE", False)

# P >= METRIC_FLOOR * I replaces the open condition Q > 0
METRIC_FLOOR = env.float("METRIC_FLOOR", 1e-6)

# Semidefinite boundary handling of the closed-form suprema
PSD_TOL = env.float("PSD_TOL", 1e-9)
RANGE_TOL = env.float("RANGE_TOL", 1e-8)

# Simulation
DIVERGENCE_RADIUS = env.float("DIVERGENCE_RADIUS", 1e6)
SINGULAR_COND = env.float("SINGULAR_COND", 1e12)
SYNTH_SUBSTEPS = env.int("SYNTH_SUBSTEPS", 10)

# Samples with |xdot| below this fraction of the median speed have no transverse frame
VELOCITY_THRESHOLD_FACTOR = env.float("VELOCITY_THRESHOLD_FACTOR", 1e-6)
