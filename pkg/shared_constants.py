"""
Shared numerical constants for the rotor engine toolkit.
SYNCHRONIZED: every module reads its tolerances from here, never from literals.
Read by: qspace.py, engines.py, dynamics.py, metrics.py, rotorctl.py
"""

# State validation
HERMITICITY_TOL = 1e-10        # ||rho - rho^dag||_F / ||rho||_F
TRACE_TOL = 1e-8               # |tr(rho) - 1|
NEGATIVITY_TOL = 1e-8          # smallest eigenvalue accepted by validate()
NEGATIVITY_FAIL = 1e-6         # smallest eigenvalue before a run is failed

# Operator checks
HAMILTONIAN_HERMITICITY_TOL = 1e-12

# Truncation edge monitor
EDGE_WARN = 1e-4
EDGE_ABORT = 1e-2

# Integrator
STEP_FACTOR = 0.05             # dt = STEP_FACTOR / omega_max
MIN_ROTOR_SPAN = 2             # l_max - l_min must be at least this
BLOWUP_BOUND = 10.0            # |rho_ij| <= 1 for any state

# Steady state relaxation
STEADY_CHECK_INTERVAL = 100    # steps between residual checks
STEADY_CONSECUTIVE = 10        # consecutive passing checks

# Quadrature
SIMPSON_PANELS = 1024

# TV regularized differentiation
TV_EPSILON = 1e-8
TV_MAX_ITER = 100
TV_REL_CHANGE = 1e-6
TV_MIN_SAMPLES = 8
TV_ALPHA_SCALE = 1e-3          # default alpha = scale * (max - min)
TV_DENSE_LIMIT = 2000          # dense solve up to this many samples, CG above

# Load output cross-check (trace form vs explicit form)
LOAD_CHECK_TOL = 1e-8

# Working fluid
OSCILLATOR_CUTOFF = 7          # n <= 7
DEFAULT_ROTOR = (-20, 60)

# Driven cycles
MIN_SAMPLES_PER_CYCLE = 200
