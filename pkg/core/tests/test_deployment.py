# core/tests/test_deployment.py
import pytest

from core.deployment import DeploymentModel, Link, Site, SiteId, fits, hops, transfer_cost
from core.exceptions import SpecInvalid


def model(client_budget=1000, server_budget=10 ** 6, latency_ms=5.0, bandwidth=1000.0):
    return DeploymentModel(
        sites=(
            Site('client', client_budget, 2.0),
            Site('server', server_budget),
            Site('cloud', None),
        ),
        links=(
            Link(('client', 'server'), latency_ms, bandwidth),
            Link(('server', 'cloud'), 10.0, 10000.0),
        ),
    )


class TestTransferCost:
    def test_latency_plus_bytes_over_bandwidth(self):
        assert transfer_cost(model(), 'server', 'client', 10 ** 6) == pytest.approx(1005.0)

    def test_same_site_is_free(self):
        assert transfer_cost(model(), 'cloud', 'cloud', 10 ** 9) == 0

    def test_multi_hop_adds_up(self):
        dm = model()
        nbytes = 50_000
        total = transfer_cost(dm, 'cloud', 'client', nbytes)
        assert total == pytest.approx(transfer_cost(dm, 'cloud', 'server', nbytes) + transfer_cost(dm, 'server', 'client', nbytes))
        assert total == pytest.approx((10.0 + 5.0) + (5.0 + 50.0))

    def test_hops_follow_the_line(self):
        assert hops('cloud', 'client') == [(SiteId.CLOUD, SiteId.SERVER), (SiteId.SERVER, SiteId.CLIENT)]
        assert hops('client', 'client') == []


class TestFits:
    def test_budget_is_inclusive(self):
        result = fits(model(), {SiteId.CLIENT: 1000, 'server': 10 ** 6 + 1, SiteId.CLOUD: 10 ** 12})
        assert result == {SiteId.CLIENT: True, SiteId.SERVER: False, SiteId.CLOUD: True}

    def test_scaling_budgets(self):
        scaled = model().with_budgets(0.5)
        assert scaled.site('client').memory_budget_bytes == 500
        assert scaled.site('cloud').unlimited


class TestValidation:
    def test_missing_site(self):
        with pytest.raises(SpecInvalid) as exc:
            DeploymentModel(sites=(Site('client', 1), Site('cloud')), links=model().links)
        assert any(d.code == 'BadSites' and d.subject == 'server' for d in exc.value.diagnostics)

    def test_only_cloud_is_unlimited(self):
        with pytest.raises(SpecInvalid):
            DeploymentModel(sites=(Site('client', None), Site('server', 1), Site('cloud')), links=model().links)

    def test_bad_bandwidth(self):
        with pytest.raises(SpecInvalid):
            model(bandwidth=0)

    def test_client_cloud_link_is_rejected(self):
        with pytest.raises(SpecInvalid):
            DeploymentModel(sites=model().sites, links=(
                Link(('client', 'cloud'), 1.0, 1.0), Link(('server', 'cloud'), 1.0, 1.0),
            ))
