"""knobtuner: three-stage DBMS configuration auto-tuning.

Stage 1 explores the knob space with a Latin hypercube warm start, stage 2
applies documentation-style tuning hints (db backend) or a tiny-feasible-
space surrogate search (gp backend), and stage 3 fine-tunes the most
important knobs with a TD3 agent over a PCA-compressed state.
"""

__version__ = "0.1.0"
