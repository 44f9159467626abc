from .test_data_fixtures import sample_mesh_json, sample_run_config_json, box_mesh, solid_rve_mesh, porous_rve_mesh, \
    bracket_mesh, elastic_constants, isotropic_hardening, elastic_hardening
from .mock_fixtures import mock_config, mock_micro_model, linear_elastic_micro_factory, LinearElasticMicroModel
from .parametrized_fixtures import small_strain_gradient, run_config_factory

__all__ = [
    "sample_mesh_json", "sample_run_config_json", "box_mesh", "solid_rve_mesh", "porous_rve_mesh", "bracket_mesh",
    "elastic_constants", "isotropic_hardening", "elastic_hardening",
    "mock_config", "mock_micro_model", "linear_elastic_micro_factory", "LinearElasticMicroModel",
    "small_strain_gradient", "run_config_factory",
]
