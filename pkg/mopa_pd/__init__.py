"""
MoPA-PD planar workbench: motion-planner-augmented RL and its distillation
into a visual direct-action policy.
"""

__version__ = "0.1.0"
