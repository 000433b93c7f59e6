"""Multi-stage cascading failure simulation and DDPG dispatch control for AC grids."""
