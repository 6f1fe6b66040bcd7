"""
Configuración, logging y validación de experimentos
"""
