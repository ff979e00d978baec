# Runner scripts; the simulator itself lives in blind_delegation
