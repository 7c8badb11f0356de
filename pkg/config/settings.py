import os
import json
import logging
from pathlib import Path
from typing import Dict, Any, Optional

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = Path(__file__).with_name("tierplan.json")

# Average uplink rates in Mbps. Device to edge is always the 5 GHz Wi-Fi LAN;
# the optical setting bridges only the edge, so the device keeps Wi-Fi to cloud.
DEFAULT_NETWORK_PRESETS: Dict[str, Dict[str, float]] = {
    "wifi": {"device_edge": 84.95, "edge_cloud": 31.53, "device_cloud": 18.75},
    "4g": {"device_edge": 84.95, "edge_cloud": 13.79, "device_cloud": 6.12},
    "5g": {"device_edge": 84.95, "edge_cloud": 22.75, "device_cloud": 11.64},
    "optical": {"device_edge": 84.95, "edge_cloud": 50.23, "device_cloud": 18.75},
}

DEFAULT_THRESHOLDS: Dict[str, float] = {
    "time_lower": 0.9,
    "time_upper": 1.1,
    "bandwidth_lower": 0.9,
    "bandwidth_upper": 1.1,
}


class Settings:
    """Application settings and configuration."""

    def __init__(self, config_file: Optional[str] = None):
        """Initialize settings and load configuration."""
        self.config_file = Path(config_file or os.getenv("TIERPLAN_CONFIG", DEFAULT_CONFIG_FILE))
        self.load_config()

    def load_config(self):
        """Load configuration from file, falling back to the environment."""
        self._load_config_impl()

    def reload_config(self):
        """Reload configuration from file."""
        self._load_config_impl()

    def _load_config_impl(self):
        """Internal implementation of loading configuration."""
        config: Dict[str, Any] = {}
        try:
            if self.config_file.exists():
                with open(self.config_file, "r") as f:
                    config = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.warning(f"⚠️ Error loading config {self.config_file}: {e}; using environment defaults")
            config = {}

        self.OUTPUT_DIR = os.getenv("TIERPLAN_OUTPUT_DIR") or config.get("output_dir", "out")
        self.LOG_LEVEL = os.getenv("TIERPLAN_LOG_LEVEL") or config.get("log_level", "INFO")
        self.DEFAULT_SEED = int(os.getenv("TIERPLAN_SEED") or config.get("default_seed", 20230419))
        self.VERIFY_TRIALS = int(os.getenv("TIERPLAN_VERIFY_TRIALS") or config.get("verify_trials", 200))
        self.ORACLE_TRIALS = int(os.getenv("TIERPLAN_ORACLE_TRIALS") or config.get("oracle_trials", 500))
        self.ORACLE_VERTICES = int(os.getenv("TIERPLAN_ORACLE_VERTICES") or config.get("oracle_vertices", 10))
        self.ORACLE_MAX_VERTICES = int(config.get("oracle_max_vertices", 16))

        thresholds = dict(DEFAULT_THRESHOLDS)
        thresholds.update(config.get("thresholds", {}))
        self.DEFAULT_THRESHOLDS = thresholds

        presets = {name: dict(values) for name, values in DEFAULT_NETWORK_PRESETS.items()}
        for name, values in config.get("network_presets", {}).items():
            presets[name.lower()] = dict(values)
        self.NETWORK_PRESETS = presets

    def as_dict(self) -> Dict[str, Any]:
        """Get the current configuration."""
        return {
            "config_file": str(self.config_file),
            "output_dir": self.OUTPUT_DIR,
            "log_level": self.LOG_LEVEL,
            "default_seed": self.DEFAULT_SEED,
            "verify_trials": self.VERIFY_TRIALS,
            "oracle_trials": self.ORACLE_TRIALS,
            "oracle_vertices": self.ORACLE_VERTICES,
            "oracle_max_vertices": self.ORACLE_MAX_VERTICES,
            "thresholds": dict(self.DEFAULT_THRESHOLDS),
            "network_presets": {k: dict(v) for k, v in self.NETWORK_PRESETS.items()},
        }


# Global settings instance
settings = Settings()
