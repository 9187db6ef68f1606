"""Fall detection from wearable inertial sensors with X-Factor Gaussian HMMs."""

__version__ = "0.1.0"

FALL_LABEL = "fall"
