"""
Capa de presentación - Manejadores de los subcomandos de la CLI
"""
