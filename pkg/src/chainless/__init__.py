"""Deterministic simulator of app-specific execution layers.

Sequencers order and execute inputs for one application each, a trust layer
verifies their traces under a pluggable model, an agglayer bridges tokens
under pessimistic accounting, and a settlement chain anchors the results.
"""

from . import kernels
from .agglayer import Agglayer, BridgeEvent, PessimisticLedger
from .core import AppStateView, KeyRegistry, TraceBlock, TransitionRecord, merkle_root
from .counter import CounterApp
from .da import DaMode, DaPolicy, DaStore
from .sequencer import FaultMode, FaultPolicy, Sequencer, SequencerConfig
from .settlement import SettlementChain
from .trust import (Committee, FullReexecution, Optimistic, OperatorTrust, TeePlusSpotCheck, Verdict,
                    VerificationReceipt, parse_trust_model)
from .zkspot import ZkSpotApp

__version__ = "0.1.0"

__all__ = [
    "Agglayer", "AppStateView", "BridgeEvent", "Committee", "CounterApp", "DaMode", "DaPolicy", "DaStore",
    "FaultMode", "FaultPolicy", "FullReexecution", "KeyRegistry", "Optimistic", "OperatorTrust",
    "PessimisticLedger", "Sequencer", "SequencerConfig", "SettlementChain", "TeePlusSpotCheck", "TraceBlock",
    "TransitionRecord", "Verdict", "VerificationReceipt", "ZkSpotApp", "kernels", "merkle_root",
    "parse_trust_model",
]
