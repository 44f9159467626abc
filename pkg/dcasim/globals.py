"""
Module for defining strings and numerical defaults used in config files and inside this project, ensuring unified
string usage and datatypes.
"""

import numpy as np

# Mesh JSON keys
UNIT_STR = "unit"
NODES_STR = "nodes"
TETS_STR = "tets"
NODE_SETS_STR = "node_sets"
BOUNDARY_SET_STR = "boundary"
FACE_SET_NAMES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")
ALLOWED_UNITS = ("mm", "um")

# Table column names
STEP_STR = "step"
INCREMENT_STR = "increment"
LOAD_FACTOR_STR = "load_factor"
NEWTON_ITER_STR = "newton_iterations"
CG_ITER_STR = "cg_iterations"
RESIDUAL_STR = "residual"
YIELDED_FRAC_STR = "yielded_fraction"
REACTION_STR = "reaction_force"
DISPLACEMENT_STR = "tip_displacement"
VON_MISES_STR = "von_mises"
EQ_STRAIN_STR = "equivalent_strain"
EQ_PLASTIC_STRAIN_STR = "equivalent_plastic_strain"
HILL_MANDEL_STR = "hill_mandel_residual"
CLUSTER_STR = "cluster"
DISPLACEMENT_FIELD_STR = "displacement"

# Voigt ordering: xx, yy, zz, yz, xz, xy. Strains use engineering shear components.
VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
VOIGT_LABELS = ("xx", "yy", "zz", "yz", "xz", "xy")
STRESS_COLUMNS = tuple(f"stress_{label}" for label in VOIGT_LABELS)
STRAIN_COLUMNS = tuple(f"strain_{label}" for label in VOIGT_LABELS)
IDENTITY_VOIGT = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])

# Solver defaults
TOL_CG = 1e-6
TOL_NEWTON = 1e-3
TOL_NEWTON_ABS = 1e-12
MAX_NEWTON_ITERS = 50
MAX_BISECTIONS = 4
CG_ITER_FACTOR = 10
MAX_RETURN_MAP_ITERS = 100
MAX_KMEANS_ITERS = 300
YIELD_CHANGE_TOL = 1e-12
FD_TANGENT_STEP = 1e-6
# MPa; macro works below it are compared absolutely
HILL_MANDEL_STRESS_FLOOR = 1e-3

# Mesh tolerances
DEGENERATE_VOLUME_TOL = 1e-14
COINCIDENT_NODE_TOL = 1e-9

# Material defaults
YOUNG_MODULUS = 6.89e4
POISSON_RATIO = 0.35
ISOTROPIC_STR = "isotropic"
KINEMATIC_STR = "kinematic"

# Microstructure defaults
RVE_SIDE_LENGTH = 100.0
RVE_RESOLUTION = 64
PORE_VOLUME_FRACTION = 0.065
N_PORES_RANGE = (5, 100)
ASPECT_RATIO_RANGE = (1.0, 5.0)
PORE_DISTANCE_RANGE = (10.0, 30.0)
MIN_MAJOR_AXIS = 1.1
MAX_MINOR_AXIS = 50.0
ANNEALING_COOLING = 0.95
ANNEALING_MOVES_PER_PORE = 200
PORE_DISTANCE_TOL = 0.10
VOLUME_FRACTION_TOL = 0.005
MAX_CLEANUP_RECALIBRATIONS = 5

# Multiscale options
ROTATIONS_PRESCRIBED_STR = "prescribed"
ROTATIONS_FREE_STR = "free"
ASSIGNMENT_UNIFORM_STR = "uniform"
ASSIGNMENT_RANDOM_STR = "random"
MICRO_ROM_STR = "rom"
MICRO_FULL_FIELD_STR = "full_field"
SOLVER_IDCG_STR = "idcg"
SOLVER_PCG_STR = "pcg"

# Output formatting
SIGNIFICANT_DIGITS = 9
FLOAT_FORMAT = f"%.{SIGNIFICANT_DIGITS}g"
CHECKPOINT_VERSION = 1

# CLI exit codes
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4
