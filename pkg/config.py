import os
from dotenv import load_dotenv

# Load environment variables from a .env file
load_dotenv()

# --- LOGGING ---
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'

# --- EXPERIMENTS ---
DEFAULT_SEED = int(os.getenv("MFRIS_SEED", "20250117"))
DEFAULT_TRIALS = int(os.getenv("MFRIS_TRIALS", "10000"))
WORKERS = int(os.getenv("MFRIS_WORKERS", str(os.cpu_count() or 1)))
TRIAL_CHUNK_SIZE = int(os.getenv("MFRIS_TRIAL_CHUNK_SIZE", "250"))
OUTPUT_DIR = os.getenv("MFRIS_OUTPUT_DIR", "results")

# --- SOLVER ---
SOLUTION_CACHE_SIZE = int(os.getenv("MFRIS_SOLUTION_CACHE_SIZE", "256"))
AO_MAX_ITER = int(os.getenv("MFRIS_AO_MAX_ITER", "100"))
# Relative to the initial error: the AO stops once |eps(t+1) - eps(t)| <= AO_REL_TOL * eps(0)
AO_REL_TOL = float(os.getenv("MFRIS_AO_REL_TOL", "1e-12"))
ORACLE_RESOLUTION = int(os.getenv("MFRIS_ORACLE_RESOLUTION", "200"))
# Lower bound of an amplification parameter, as a fraction of sqrt(beta_max * alpha)
AMPLITUDE_FLOOR_RATIO = 1e-6
# Condition estimate above which an information matrix is treated as singular
SINGULARITY_COND_LIMIT = 1e12

# --- SCENARIO DEFAULTS (uplink measurement setup) ---
DEFAULT_M = 8
DEFAULT_N = 25
DEFAULT_USER_POWER_DBM = 20.0
DEFAULT_SIGMA_S_SQ_DBM = -70.0
DEFAULT_SIGMA_SQ_DBM = -80.0
DEFAULT_BETA_MAX_DB = 19.0
DEFAULT_D_BS_RIS = 20.0
DEFAULT_PL_REF_DB = -30.0
DEFAULT_PL_EXPONENT_RIS_BS = 2.5
DEFAULT_PL_EXPONENT_USER_RIS = 2.5
DEFAULT_PL_EXPONENT_USER_BS = 3.5

# --- USER PLACEMENT ---
USER_REGION_CENTER = (0.0, 20.0, 0.0)
USER_REGION_RADIUS = 5.0
MIN_LINK_DISTANCE = 1.0
