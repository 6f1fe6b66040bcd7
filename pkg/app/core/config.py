"""
Configuración centralizada usando Pydantic Settings
"""
from typing import Optional
from pydantic import Field
from pydantic_settings import BaseSettings
from pathlib import Path


class Settings(BaseSettings):
    """Configuración centralizada del toolkit"""

    # Aplicación
    app_name: str = Field(default="Adaptation-Imputation Toolkit", alias="APP_NAME")
    app_version: str = Field(default="0.1.0", alias="APP_VERSION")
    environment: str = Field(default="development", alias="ENVIRONMENT")

    # Directorios de datos y de corridas
    data_dir: str = Field(default="./data", alias="DATA_DIR")
    runs_dir: str = Field(default="./runs", alias="RUNS_DIR")

    # Cómputo
    device: str = Field(default="cpu", alias="DEVICE")
    torch_threads: Optional[int] = Field(default=None, alias="TORCH_THREADS")
    allow_download: bool = Field(default=True, alias="ALLOW_DOWNLOAD")

    # Logging
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")
    log_format: str = Field(default="json", alias="LOG_FORMAT")

    def model_post_init(self, __context):
        """Validaciones posteriores a la carga"""
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if self.log_level.upper() not in valid_levels:
            raise ValueError(f"log_level must be one of {valid_levels}")
        self.log_level = self.log_level.upper()

        valid_formats = ["json", "console"]
        if self.log_format.lower() not in valid_formats:
            raise ValueError(f"log_format must be one of {valid_formats}")
        self.log_format = self.log_format.lower()

        valid_envs = ["development", "testing", "production"]
        if self.environment.lower() not in valid_envs:
            raise ValueError(f"environment must be one of {valid_envs}")
        self.environment = self.environment.lower()

        if not (self.device == "cpu" or self.device.startswith("cuda")):
            raise ValueError("device must be 'cpu' or 'cuda[:N]'")

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
        "populate_by_name": True,
    }


# Singleton instance
_settings = None

def get_settings() -> Settings:
    """Get settings singleton instance"""
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def override_settings(**overrides) -> Settings:
    """Reemplaza el singleton aplicando overrides (flags de la CLI, tests)"""
    global _settings
    current = get_settings().model_dump()
    current.update({k: v for k, v in overrides.items() if v is not None})
    _settings = Settings(**current)
    return _settings


def reset_settings() -> None:
    """Descarta el singleton para que se relea el entorno"""
    global _settings
    _settings = None


# Validación al startup
def validate_configuration():
    """Validar configuración y preparar directorios"""
    settings = get_settings()

    Path(settings.data_dir).mkdir(parents=True, exist_ok=True)
    Path(settings.runs_dir).mkdir(parents=True, exist_ok=True)

    if settings.device.startswith("cuda"):
        import torch
        if not torch.cuda.is_available():
            raise ValueError("DEVICE requests CUDA but no CUDA device is available")

    return True
