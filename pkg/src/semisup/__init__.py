"""Semi-supervised image classification with per-class dynamic confidence
thresholds, selective negative learning, and an attention-bank feature
enhancer.

Subpackages/modules:
    datamodel  -- shared domain types and probability helpers
    augment    -- weak (crop/flip) and strong (multi-op) augmentation
    attention  -- local-attention score bank with stochastic map dropout
    dta        -- EMA teacher and dynamic threshold adjustment
    snl        -- complementary-label mining and negative learning
    losses     -- supervised, consistency, and combined objectives
    model      -- small configurable convolutional backbone
    trainer    -- training loop, balanced sampling, evaluation, checkpoints
    synth      -- synthetic dataset generator
    audit      -- trainer-free replay of threshold/negative-label decisions
    cli        -- command line entry points
"""

__version__ = "0.1.0"
