"""
Soliton Workbench

Finds hylomorphic solitons and vortices of nonlinear Schroedinger and
Klein-Gordon models by penalised minimization, and checks their stability.
"""

__version__ = "1.0.0"
__author__ = "Soliton Workbench"
