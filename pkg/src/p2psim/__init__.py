"""Peer-to-peer energy community simulator.

Couples a heteroscedastic transformer forecaster with independently trained
DQN prosumer agents, a supply-demand-ratio priced double auction, and
tariff/uncertainty conditioned rewards.
"""

__version__ = "0.1.0"
