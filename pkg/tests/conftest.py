import os
import sys

import numpy as np
import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from insertion.geometry import HoleGeometry, PegGeometry, circle_cloud, manipulation_frame
from insertion.hand import Hand, generate_dataset
from insertion.inverse_model import fit_inverse_model
from insertion.models import Base
from insertion.posemath import Pose
from insertion.schemas import ComplianceConfig, TrainingConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def hand():
    return Hand()


@pytest.fixture
def large_peg():
    return PegGeometry(circle_cloud(20.0), 60.0, 40.0)


@pytest.fixture
def large_hole():
    return HoleGeometry.for_peg(circle_cloud(20.0), 0.25, 20.0)


@pytest.fixture
def large_frame(large_peg):
    return manipulation_frame(large_peg.face)


@pytest.fixture
def compliant():
    return ComplianceConfig()


@pytest.fixture
def table_pose():
    return Pose.from_translation([200.0, 0.0, 0.0])


@pytest.fixture(scope="session")
def small_dataset():
    """Desk-sized dataset shared by the hand and model tests"""
    return generate_dataset(6, 1500, seed=0)


@pytest.fixture(scope="session")
def fitted_model(small_dataset):
    train, held_out = small_dataset.split(0.2, seed=0)
    return fit_inverse_model(train, TrainingConfig(epochs=40, batch_size=128, seed=0), validation=held_out)


@pytest.fixture
def test_db():
    """In-memory database session"""
    engine = create_engine("sqlite:///:memory:", echo=False)
    Base.metadata.create_all(engine)
    TestingSessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    db = TestingSessionLocal()
    try:
        yield db
    finally:
        db.close()


@pytest.fixture(scope="session")
def desk_dataset():
    """The default 20k-transition dataset"""
    cfg = TrainingConfig()
    return generate_dataset(cfg.n_triangles, cfg.n_transitions, seed=cfg.seed)


@pytest.fixture(scope="session")
def acceptance_model(desk_dataset):
    """Inverse model on the full desk-scale dataset, used by the slow experiments"""
    return fit_inverse_model(desk_dataset, TrainingConfig())
