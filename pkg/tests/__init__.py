# quenched-lab test suite
