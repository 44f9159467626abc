import logging
from pathlib import Path

from dcasim.config import Config
from dcasim.data_io import write_json
from dcasim.mcr import RveDescriptors, descriptor_report, generate_rve
from dcasim.mesh import save_mesh, write_vtk

logger = logging.getLogger(__name__)


def run_generate_rve_process(config: Config) -> list[Path]:
    """Public function for reconstructing the RVEs of the mcr config section. Every descriptor set gets its own
    subdirectory of the output directory and a seed offset by its index.

    Args:
        config (Config): run config.

    Returns:
        list[Path]: paths of the written mesh files.
    """
    descriptors = config.get_rve_descriptors()
    out_dir = config.get_out_dir()
    mesh_paths = []
    for index, target in enumerate(descriptors):
        mesh_paths.append(_run_generate_single_rve(target, seed=config.get_seed() + index,
                                                   resolution=config.get_rve_resolution(),
                                                   out_dir=out_dir / f"rve_{index:03d}"))
    logger.info(f"Generated {len(mesh_paths)} RVEs into {out_dir}")
    return mesh_paths


def _run_generate_single_rve(target: RveDescriptors, seed: int, resolution: int, out_dir: Path) -> Path:
    """Internal function writing the pore list, mesh, descriptor report and preview VTK of one RVE."""
    pores, grid, mesh = generate_rve(target, seed=seed, resolution=resolution)
    write_json(pores.to_dict(), out_dir / "pores.json")
    mesh_path = out_dir / "mesh.json"
    save_mesh(mesh, mesh_path)
    report = descriptor_report(pores, grid, target)
    report["seed"] = seed
    write_json(report, out_dir / "descriptors.json")
    write_vtk(mesh, None, {"volume": mesh.volumes}, out_dir / "preview.vtk")
    return mesh_path
