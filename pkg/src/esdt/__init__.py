"""Evolution-strategy training of feedforward and decision-transformer policies.

The package is organized around a flat parameter vector: policies are pure
functions of (flat params, input), the optimizer perturbs and updates that
vector, and the distributed runtime ships only noise-table offsets and scalar
fitnesses between processes.
"""

from .specs import PolicySpec, param_count, flatten, unflatten, init_params

__all__ = ["PolicySpec", "param_count", "flatten", "unflatten", "init_params"]
