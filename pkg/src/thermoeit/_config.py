import os
import threading
from typing import Optional

from dotenv import load_dotenv
from loguru import logger
from pydantic import ConfigDict
from pydantic_settings import BaseSettings


def load_environment(env_file: Optional[str] = None):
    dotenv_path = os.path.abspath(env_file or '.env')
    if os.path.exists(dotenv_path):
        load_dotenv(dotenv_path=dotenv_path)
        logger.debug(f"Loaded environment from {dotenv_path}")
    elif env_file is not None:
        logger.warning(f"Environment file {dotenv_path} not found, using process environment")


class RunnerSettings(BaseSettings):
    OUTPUT_ROOT: str = 'runs'
    LOG_LEVEL: str = 'INFO'
    LOG_FILE: Optional[str] = None
    THREADS: int = 1
    DEFAULT_CONFIG: Optional[str] = None

    model_config = ConfigDict(
        env_prefix='THERMOEIT_',
        extra='ignore',
        frozen=True
    )


class SettingsManager:
    _instance = None
    _instance_lock = threading.Lock()

    def __init__(self):
        if not hasattr(self, '_initialized'):
            self._settings_lock = threading.Lock()
            self._settings = RunnerSettings()
            self._initialized = True

    @classmethod
    def get_instance(cls):
        if cls._instance is None:
            with cls._instance_lock:
                if cls._instance is None:
                    cls._instance = cls()
        return cls._instance

    @classmethod
    def reset(cls):
        with cls._instance_lock:
            cls._instance = None

    def reload(self):
        new_settings = RunnerSettings()
        with self._settings_lock:
            self._settings = new_settings

    def get_settings(self) -> RunnerSettings:
        with self._settings_lock:
            return self._settings
