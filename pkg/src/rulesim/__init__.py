"""rulesim: deterministic 2D ecosystem simulation with reinforcement
learning agents whose reward coefficients update endogenously across
generations."""

from .genome import EntGene, PPGene, default_ent_gene, default_pp_gene
from .rule import ExpectationTable, RewardLedger
from .world import World, WorldConfig

__version__ = "0.1.0"

__all__ = ["EntGene", "PPGene", "default_ent_gene", "default_pp_gene",
           "ExpectationTable", "RewardLedger", "World", "WorldConfig",
           "__version__"]
