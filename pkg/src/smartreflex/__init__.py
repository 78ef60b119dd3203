"""Predicting ferritin orders from CBC results and lab history.

Subpackages and modules:

* ``catalog``, ``ingest``: analytes, reference ranges, patients and lab results
* ``cohort``: CBC events and ferritin-ordered labels
* ``features``: current CBC values plus aggregates of prior results
* ``rules``: the rule-based reflex protocols used as comparators
* ``learn``: splitting, logistic regression, random forests, tuning, artifacts
* ``evaluate``: metrics, aggregation, rule comparison, MNAR check, review queue
* ``synth``: synthetic data with a known ordering model
"""
__version__ = "0.1.0"
