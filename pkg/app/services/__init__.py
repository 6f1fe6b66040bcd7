"""
Servicios de negocio - Entrenamiento, pérdidas, transporte óptimo y evaluación
"""

class ServiceError(Exception):
    """Excepción base para errores de servicios"""
    pass

class ConfigurationError(ServiceError):
    """Configuración inválida o incompatible con los datos"""
    pass

class ContractViolationError(ServiceError):
    """Se violó una precondición de una operación (formas, rangos, marginales)"""
    pass

class TrainingDivergedError(ServiceError):
    """La pérdida dejó de ser finita durante el entrenamiento"""

    def __init__(self, message: str, diagnostic: dict = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
