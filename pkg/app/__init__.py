"""
Adaptation-Imputation Toolkit
Adaptación de dominio no supervisada con componentes faltantes de forma sistemática
"""
