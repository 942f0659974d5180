import os
from datetime import datetime, timedelta

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

T0 = datetime(2019, 3, 1)
H = timedelta(hours=1)


@pytest.fixture(scope="session")
def small_fleet():
    """A quick fleet with every severity present: 6 servers, 500 hours, 30:1."""
    from rtap.synthgen import business_fleet
    return business_fleet("Biz", servers=6, hours=500, seed=11, imbalance_ratio=30)


@pytest.fixture(scope="session")
def small_params():
    from rtap.forecast import ForestParams
    from rtap.identify import BaseParams, StackingParams
    from rtap.pipeline import PipelineParams
    base = BaseParams(rf_n_trees=10, gbdt_rounds=15)
    return PipelineParams(forest=ForestParams(n_trees=8), stacking=StackingParams(base=base, folds=3))


@pytest.fixture(scope="session")
def small_model(small_fleet, small_params):
    """Pipeline trained on the first 400 hours of ``small_fleet``."""
    from rtap.datamodel import chronological_split
    from rtap.pipeline import fit_pipeline, prepare
    data = prepare(small_fleet.records, small_fleet.alarms, small_params.lag)
    train, _ = chronological_split(data.dataset, small_fleet.start + 400 * H)
    return fit_pipeline(train, small_params, "Biz", seed=0)
