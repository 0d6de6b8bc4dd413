"""dhcp-sentinel: rogue-DHCP-aware, multi-layer intrusion detection over event traces."""
from .anomaly import PickDetector, ThresholdModel, attack_sign, pick_detect, train_baseline
from .codec import DhcpMessage, DhcpMessageType, MacAddress, parse_dhcp, serialize_dhcp
from .config import Config, load_config
from .pipeline import Alert, CentralState, PolicyUpdate, SentinelIDS, run
from .report import DetectionReport, efficiency, render_report
from .rules import IngredientConfig, evaluate_rules
from .signatures import SignatureDb, load_signatures, match_event
from .simulate import ScenarioSpec, simulate
from .trace import AttackClass, EventTrace, NetworkEvent, load_trace, write_trace
from .verifier import Whitelist, detect_offer_race, verify_offer

__version__ = "0.1.0"

__all__ = [
    "Alert", "AttackClass", "CentralState", "Config", "DetectionReport", "DhcpMessage",
    "DhcpMessageType", "EventTrace", "IngredientConfig", "MacAddress", "NetworkEvent",
    "PickDetector", "PolicyUpdate", "ScenarioSpec", "SentinelIDS", "SignatureDb",
    "ThresholdModel", "Whitelist", "attack_sign", "detect_offer_race", "efficiency",
    "evaluate_rules", "load_config", "load_signatures", "load_trace", "match_event",
    "parse_dhcp", "pick_detect", "render_report", "run", "serialize_dhcp", "simulate",
    "train_baseline", "verify_offer", "write_trace",
]
