"""
Setup script for bamsim
"""
from setuptools import setup

MODULES = [
    'bandwidth_model',
    'bam_engine',
    'path_admission',
    'traffic_generator',
    'event_log',
    'simulator',
    'scenario',
    'metrics_engine',
    'conformance_engine',
    'topology',
    'scenario_loader',
    'transparency',
    'result_exporter',
    'result_database',
    'bamsim',
]

setup(
    name='bamsim',
    version='1.0.0',
    description='頻寬分配模型 (MAM / RDM / ATCS / FRFS) 模擬與 ITM 符合性檢查',
    py_modules=MODULES,
    data_files=[('scenarios', ['scenarios/nsf14.yaml', 'scenarios/scenario1.yaml', 'scenarios/scenario2.yaml'])],
    python_requires='>=3.10',
    install_requires=[
        'numpy>=1.24.0',
        'pandas>=2.0.0',
        'simpy>=4.0.0',
        'PyYAML>=6.0',
        'pydantic>=2.0',
        'networkx>=3.0',
    ],
    extras_require={'test': ['pytest>=7.0']},
    entry_points={'console_scripts': ['bamsim=bamsim:main']},
)
