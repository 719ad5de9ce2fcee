from .dynsys import BlowUpError, EvolutionModel, Norm, SwitchingSignal, evolve

__version__ = "0.1.0"
