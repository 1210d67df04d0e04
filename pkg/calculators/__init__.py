# calculators 模組初始化檔案
from .mesh_geometry import TriangleMesh, load_mesh, generate_sphere, generate_ellipsoid, summarize
from .potential_theory import capacitance, magnetic_polarizability, electric_polarizability, impedance_capacitance
from .acoustic_solver import Scatterer, Scene, PlaneWave, assemble_dirichlet, solve_charges, assemble_neumann, solve_neumann
from .em_scattering import EMBody, EMField6, apply_scattering_matrix, em_amplitude
from .scenario import parse_scenario, run, write_results

__all__ = [
    'TriangleMesh', 'load_mesh', 'generate_sphere', 'generate_ellipsoid', 'summarize',
    'capacitance', 'magnetic_polarizability', 'electric_polarizability', 'impedance_capacitance',
    'Scatterer', 'Scene', 'PlaneWave', 'assemble_dirichlet', 'solve_charges', 'assemble_neumann', 'solve_neumann',
    'EMBody', 'EMField6', 'apply_scattering_matrix', 'em_amplitude',
    'parse_scenario', 'run', 'write_results'
]
