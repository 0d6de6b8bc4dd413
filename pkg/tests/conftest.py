from ipaddress import IPv4Address, IPv4Network
from pathlib import Path

import pytest
from hypothesis import strategies as st

from dhcp_sentinel.anomaly import train_baseline
from dhcp_sentinel.codec import DhcpMessage, DhcpMessageType, DhcpOption, MacAddress, STRUCTURED_OPTIONS
from dhcp_sentinel.rules import IngredientConfig
from dhcp_sentinel.simulate import ScenarioSpec, gen_benign
from dhcp_sentinel.trace import (
    AttackClass, DataPacket, Direction, Endpoint, NetworkEvent, payload_digest,
)
from dhcp_sentinel.verifier import ServerSignature, Whitelist

FIXTURES = Path(__file__).parent / "fixtures"
ROOT = Path(__file__).parent.parent

LEGIT_IP = IPv4Address("10.0.0.1")
LEGIT_MAC = MacAddress.parse("02:00:00:00:00:01")
ROGUE_IP = IPv4Address("10.0.0.66")
ROGUE_MAC = MacAddress.parse("02:00:00:00:00:66")
CLIENT_MAC = MacAddress.parse("aa:bb:cc:dd:ee:ff")


def ep(n: int, **kw) -> Endpoint:
    return Endpoint(MacAddress(bytes([2, 0, 0, 0, 9, n])), **kw)


def ev(eid, ts, kind, src=None, dst=None, direction=Direction.INBOUND, label=None):
    return NetworkEvent(eid, float(ts), direction, src or ep(1), dst or ep(2), kind, label)


def data(tag="x", size=100, **kw) -> DataPacket:
    return DataPacket(payload_digest(tag.encode()), size, **kw)


def legit_entry() -> ServerSignature:
    return ServerSignature(LEGIT_IP, LEGIT_MAC, IPv4Network("10.0.0.0/24"), LEGIT_IP, (LEGIT_IP,))


def offer(server_id=LEGIT_IP, your_addr="10.0.0.50", router=LEGIT_IP, dns=(LEGIT_IP,), xid=7,
          mtype=DhcpMessageType.OFFER) -> DhcpMessage:
    return DhcpMessage(op=2, xid=xid, client_mac=CLIENT_MAC, message_type=mtype,
                       your_addr=IPv4Address(your_addr), server_id=server_id, router=router,
                       dns=dns, lease_secs=3600)


@pytest.fixture
def whitelist():
    return Whitelist((legit_entry(),))


@pytest.fixture
def cfg():
    return IngredientConfig.default()


@pytest.fixture(scope="session")
def benign_300():
    return gen_benign(ScenarioSpec("benign", 300.0, 42))


@pytest.fixture(scope="session")
def benign_model_1000():
    return train_baseline(gen_benign(ScenarioSpec("benign", 1000.0, 42)))


# -- hypothesis strategies ------------------------------------------------------

macs = st.binary(min_size=6, max_size=6).map(MacAddress)
ipv4 = st.integers(0, 2 ** 32 - 1).map(IPv4Address)
u8, u16, u32 = st.integers(0, 255), st.integers(0, 2 ** 16 - 1), st.integers(0, 2 ** 32 - 1)
extra_options = st.lists(
    st.builds(DhcpOption,
              st.integers(1, 254).filter(lambda c: c not in STRUCTURED_OPTIONS),
              st.binary(max_size=255)),
    max_size=6,
).map(tuple)


@st.composite
def dhcp_messages(draw):
    return DhcpMessage(
        op=draw(u8), xid=draw(u32), client_mac=draw(macs),
        message_type=draw(st.sampled_from(list(DhcpMessageType))),
        your_addr=draw(ipv4), server_addr=draw(ipv4), relay_addr=draw(ipv4), client_addr=draw(ipv4),
        server_id=draw(st.none() | ipv4), router=draw(st.none() | ipv4),
        dns=draw(st.none() | st.lists(ipv4, min_size=1, max_size=5).map(tuple)),
        lease_secs=draw(st.none() | u32), extra_options=draw(extra_options),
        htype=draw(u8), hops=draw(u8), secs=draw(u16), flags=draw(u16),
    )


labels = st.none() | st.sampled_from(list(AttackClass))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
