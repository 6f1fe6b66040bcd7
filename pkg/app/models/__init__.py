"""
Modelos de datos: esquemas Pydantic, contenedores de tensores y redes
"""
