"""Toolkit for a nonnegative-amplitude (QMA+) verifier for gapped constraint systems.

Modules: ``csp`` (instances), ``expander`` (certified expanders),
``regularizer`` (consistency wiring), ``verifier`` (test operators),
``adversary`` (nonnegative maximization), ``protocol`` (parameters and
experiments), ``audit`` (lemma suites), ``cli``.
"""

__version__ = "0.1.0"
