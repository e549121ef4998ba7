import numpy as np
import pytest

import radio
from energest import EnergestLedger, EnergyModel, account_energy
from exceptions import ConfigInvalid


def test_airtime():
    assert radio.airtime(0) == pytest.approx(6 * 8 / 250_000)
    assert radio.airtime(127) == pytest.approx(133 * 8 / 250_000)


def test_fragmentation():
    assert radio.fragment_sizes(25) == [56]
    sizes = radio.fragment_sizes(200)
    assert len(sizes) == 3
    assert all(size <= 127 for size in sizes)
    assert sum(sizes) - 31 * len(sizes) - 4 - 5 * (len(sizes) - 1) == 200


def _fresh_xmac(seed, params=None):
    return radio.XmacState(params or radio.XmacParams(), np.random.default_rng(seed))


def test_xmac_mean_strobe_is_half_the_check_interval():
    rng = np.random.default_rng(0)
    strobes = []
    for seed in range(4000):
        state = _fresh_xmac(seed)
        outcome = radio.mac_async_lpl(radio.Frame('a', 'b', 60), state, float(rng.uniform(0, 10)))
        strobes.append(outcome.access_delay)
    assert max(strobes) <= 0.125 + 1e-9
    assert np.mean(strobes) == pytest.approx(0.0625, abs=0.004)


def test_xmac_charges():
    state = _fresh_xmac(1)
    outcome = radio.mac_async_lpl(radio.Frame('a', 'b', 60), state, 0.0)
    strobe = outcome.access_delay
    air, ack = radio.airtime(60), radio.airtime(radio.ACK_FRAME_BYTES)
    assert outcome.delivery == pytest.approx(strobe + air)
    assert outcome.charges['a'].tx == pytest.approx(strobe + air)
    assert outcome.charges['b'].tx == pytest.approx(ack)
    assert outcome.charges['b'].rx == pytest.approx(air + 0.010)
    assert outcome.charges['a'].rx == pytest.approx(ack + 0.010)


def test_xmac_strobe_split_is_configurable():
    params = radio.XmacParams(strobe_tx_fraction=0.5)
    outcome = radio.mac_async_lpl(radio.Frame('a', 'b', 60), _fresh_xmac(1, params), 0.0)
    strobe, air = outcome.access_delay, radio.airtime(60)
    assert outcome.charges['a'].tx == pytest.approx(strobe / 2 + air)
    assert outcome.charges['a'].rx == pytest.approx(strobe / 2 + radio.airtime(radio.ACK_FRAME_BYTES) + 0.010)


def test_xmac_back_to_back_frames_skip_strobing():
    state = _fresh_xmac(2)
    first = radio.mac_async_lpl(radio.Frame('a', 'b', 60), state, 0.0)
    second = radio.mac_async_lpl(radio.Frame('b', 'a', 60), state, first.delivery + 0.001)
    assert second.access_delay == 0.0
    assert second.delivery == pytest.approx(first.delivery + 0.001 + radio.airtime(60))


def test_xmac_zero_length_frame_has_airtime():
    outcome = radio.mac_async_lpl(radio.Frame('a', 'b', 0), _fresh_xmac(3), 0.0)
    assert outcome.delivery - outcome.start == pytest.approx(radio.airtime(0))
    assert radio.airtime(0) > 0


def test_beacon_sends_inside_active_portion():
    state = radio.BeaconState(radio.BeaconParams(), np.random.default_rng(0))
    outcome = radio.mac_beacon_enabled(radio.Frame('a', 'b', 40), state, 0.001)
    assert outcome.start < 0.01536
    assert outcome.charges['a'].displace_rx


def test_beacon_defers_to_next_superframe():
    state = radio.BeaconState(radio.BeaconParams(), np.random.default_rng(0))
    outcome = radio.mac_beacon_enabled(radio.Frame('a', 'b', 40), state, 0.05)
    assert 0.12288 <= outcome.start < 0.12288 + 0.01536


def test_beacon_mean_access_delay():
    params = radio.BeaconParams()
    closed_form = radio.beacon_mean_access_delay(params)
    assert closed_form == pytest.approx(0.04704, abs=1e-5)
    assert params.beacon_interval_s / 2 - params.superframe_s <= closed_form <= params.beacon_interval_s / 2

    state = radio.BeaconState(params, np.random.default_rng(5))
    rng = np.random.default_rng(6)
    delays = [radio.mac_beacon_enabled(radio.Frame('a', 'b', 40), state, float(t)).access_delay
              for t in rng.uniform(0, 100, 5000)]
    assert np.mean(delays) == pytest.approx(closed_form, abs=0.006)


def test_idle_duty_cycles():
    assert radio.idle_rx_fraction(radio.BeaconParams()) == pytest.approx(0.125)
    assert radio.idle_rx_fraction(radio.XmacParams()) == pytest.approx(0.08)


def test_account_energy_arithmetic():
    ledger = EnergestLedger('n', radio_tx=10.0)
    energy = account_energy(ledger, EnergyModel(voltage_v=2.8, radio_tx=20.0))
    assert energy.radio_tx == pytest.approx(0.56)
    assert energy.total == pytest.approx(0.56)


def test_account_energy_zero_ledger():
    assert account_energy(EnergestLedger(), EnergyModel()).total == 0.0


def test_account_energy_is_linear_in_voltage():
    ledger = EnergestLedger('n', cpu_active=3.0, cpu_lpm=50.0, radio_rx=7.0, radio_tx=1.0, radio_off=40.0)
    base = account_energy(ledger, EnergyModel(voltage_v=2.0, radio_off=0.5))
    double = account_energy(ledger, EnergyModel(voltage_v=4.0, radio_off=0.5))
    for name in ('cpu_active', 'cpu_lpm', 'radio_rx', 'radio_tx', 'radio_off'):
        assert getattr(double, name) == pytest.approx(2 * getattr(base, name))


def test_ledger_close_conserves_time():
    ledger = EnergestLedger('n')
    ledger.charge_cpu(12.0)
    ledger.charge_rx(30.0)
    ledger.charge_tx(5.0, displace_rx=True)
    ledger.close(100.0)
    assert ledger.cpu_active + ledger.cpu_lpm == pytest.approx(100.0)
    assert ledger.radio_rx == pytest.approx(25.0)
    assert ledger.radio_rx + ledger.radio_tx + ledger.radio_off == pytest.approx(100.0)


@pytest.mark.parametrize('kwargs', [
    {'voltage_v': 0},
    {'cpu_active': -1},
    {'radio_off': 30.0, 'radio_rx': 18.5},
])
def test_energy_model_validation(kwargs):
    with pytest.raises(ConfigInvalid):
        EnergyModel(**kwargs)
