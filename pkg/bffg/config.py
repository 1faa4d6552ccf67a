# bffg/config.py
import logging
import math
import os

from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name, '').strip()
    if not raw:
        return float(default)
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"{name} must be a number, got '{raw}'")


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, '').strip()
    if not raw:
        return int(default)
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got '{raw}'")


# Logging
LOG_LEVEL = os.getenv('BFFG_LOG_LEVEL', 'INFO')

# Trace persistence (empty disables it)
DB_URL = os.getenv('BFFG_DB_URL', '').strip()

if DB_URL and not DB_URL.startswith(('sqlite', 'postgres')):
    logger.warning("BFFG_DB_URL is neither sqlite nor PostgreSQL; trace persistence is untested on other backends.")

# SDE edges
SDE_MAX_STEP = _env_float('BFFG_SDE_MAX_STEP', 1e-2)

# Gaussian pullback
H_COND_GATE = _env_float('BFFG_H_COND_GATE', 1e8)
H_BLOWUP = _env_float('BFFG_H_BLOWUP', 1e12)

# CTMC edges
CTMC_GRID = _env_int('BFFG_CTMC_GRID', 64)
CTMC_SAFETY = _env_float('BFFG_CTMC_SAFETY', 1.2)
CTMC_DENSE_MAX = _env_int('BFFG_CTMC_DENSE_MAX', 1000)
GL_NODES = _env_int('BFFG_GL_NODES', 8)

# Gamma edges
GJ_NODES = _env_int('BFFG_GJ_NODES', 32)
REJECTION_CAP = _env_int('BFFG_REJECTION_CAP', 1_000_000)

# Wright-Fisher edges
WF_CLAMP = _env_float('BFFG_WF_CLAMP', 1e-6)

# Oracle
ENUM_LIMIT = _env_int('BFFG_ENUM_LIMIT', 1_000_000)


def default_sde_steps(tau: float) -> int:
    """Number of grid steps for a continuous edge of length ``tau``.

    The grid is uniform with step at most ``SDE_MAX_STEP`` and at least two
    steps, so RK4 and Euler-Maruyama always share a non-trivial grid.
    """
    if tau <= 0:
        raise ValueError(f"edge duration must be positive, got {tau}")
    return max(2, math.ceil(tau / SDE_MAX_STEP - 1e-9))
