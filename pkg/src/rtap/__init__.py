"""Hourly server KPI forecasting, anomaly prediction and severity grading.

Modules
-------
datamodel    records, feature layout, labeled datasets
preprocess   CSV ingestion, cleaning, gap filling, standardization
forecast     random forest regression and naive/MA/ES baselines
identify     decision tree, random forest, kNN and GBDT blended by stacking
severity     weighted-replication kNN severity grader
metrics      confusion matrices, F-beta, evaluation reports
synthgen     synthetic fleets with labeled anomalies
pipeline     training, prediction and evaluation of the whole chain
bundle       checksummed model files
config, cli  run configuration and the ``rtap`` command
experiments  synthetic comparisons used by the acceptance tests and scripts
"""

__version__ = "0.1.0"
