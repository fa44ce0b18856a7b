"""silolab: a desk-scale neural superoptimization laboratory.

A miniature x86-64-flavored assembly language with a decidable bounded
equivalence verifier and a static latency cost model, a synthetic corpus of
unoptimized/optimized function pairs, a small transformer policy over the
token vocabulary, and two fine-tuning loops on top of supervised
pre-training: self-imitation (replace a training target whenever a sampled
rewrite verifies and is strictly cheaper) and policy-gradient with a
per-program baseline.
"""

__version__ = "0.1.0"

from .isa import Program, parse, canonicalize_labels  # noqa: F401
from .machine import MachineState, LiveOutSpec, execute  # noqa: F401
