"""
Repositorios de datos y de corridas con manejo de errores personalizados
"""

class RepositoryError(Exception):
    """Excepción base para errores de repositorio"""
    pass

class DataFetchError(RepositoryError):
    """Archivos de datos ausentes o descarga fallida"""
    pass

class RunNotFoundError(RepositoryError):
    """Directorio de corrida inexistente o incompleto"""
    pass

class CheckpointError(RepositoryError):
    """Checkpoint corrupto o incompatible"""
    pass
