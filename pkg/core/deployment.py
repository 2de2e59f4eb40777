# core/deployment.py
"""Sites, budgets and links of the client / server / cloud deployment."""
import logging
from dataclasses import dataclass, replace
from enum import Enum

from .exceptions import SpecInvalid
from .plans import Diagnostic

logger = logging.getLogger(__name__)


class SiteId(str, Enum):
    CLIENT = 'client'
    SERVER = 'server'
    CLOUD = 'cloud'


# Upstream first: data flows cloud -> server -> client.
SITE_ORDER = (SiteId.CLOUD, SiteId.SERVER, SiteId.CLIENT)


def site_rank(site):
    return SITE_ORDER.index(SiteId(site))


def is_upstream_or_same(upstream, downstream):
    return site_rank(upstream) <= site_rank(downstream)


def sites_between(upstream, downstream):
    """Sites from upstream down to downstream, inclusive."""
    return SITE_ORDER[site_rank(upstream):site_rank(downstream) + 1]


@dataclass(frozen=True)
class Site:
    id: SiteId
    memory_budget_bytes: int = None
    compute_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'id', SiteId(self.id))

    @property
    def unlimited(self):
        return self.memory_budget_bytes is None


@dataclass(frozen=True)
class Link:
    endpoints: tuple
    latency_ms: float
    bandwidth_bytes_per_ms: float

    def __post_init__(self):
        object.__setattr__(self, 'endpoints', tuple(SiteId(site) for site in self.endpoints))

    def connects(self, a, b):
        return {SiteId(a), SiteId(b)} == set(self.endpoints)

    def transfer_time(self, nbytes):
        return self.latency_ms + nbytes / self.bandwidth_bytes_per_ms


@dataclass(frozen=True)
class DeploymentModel:
    sites: tuple
    links: tuple

    def __post_init__(self):
        object.__setattr__(self, 'sites', tuple(self.sites))
        object.__setattr__(self, 'links', tuple(self.links))
        diagnostics = validate_deployment(self)
        if diagnostics:
            raise SpecInvalid(diagnostics)

    def site(self, site_id):
        site_id = SiteId(site_id)
        for site in self.sites:
            if site.id is site_id:
                return site
        raise KeyError(site_id.value)

    def link(self, a, b):
        for link in self.links:
            if link.connects(a, b):
                return link
        raise KeyError(f"{SiteId(a).value}<->{SiteId(b).value}")

    def with_budgets(self, factor):
        """Copy with every finite budget multiplied by factor."""
        return replace(self, sites=tuple(
            site if site.unlimited else replace(site, memory_budget_bytes=int(site.memory_budget_bytes * factor))
            for site in self.sites
        ))


def validate_deployment(dm):
    diagnostics = []
    ids = [site.id for site in dm.sites]
    for site_id in SiteId:
        if ids.count(site_id) != 1:
            diagnostics.append(Diagnostic('BadSites', site_id.value, f"declared {ids.count(site_id)} times"))
    for site in dm.sites:
        if site.compute_scale is None or site.compute_scale <= 0:
            diagnostics.append(Diagnostic('BadComputeScale', site.id.value, f"{site.compute_scale}"))
        if site.id is SiteId.CLOUD:
            continue
        if site.unlimited:
            diagnostics.append(Diagnostic('BadBudget', site.id.value, 'only the cloud has unlimited storage'))
        elif site.memory_budget_bytes < 0:
            diagnostics.append(Diagnostic('BadBudget', site.id.value, f"{site.memory_budget_bytes}"))

    expected = [(SiteId.CLIENT, SiteId.SERVER), (SiteId.SERVER, SiteId.CLOUD)]
    if len(dm.links) != 2 or not all(any(link.connects(*pair) for link in dm.links) for pair in expected):
        diagnostics.append(Diagnostic('BadLinks', 'links', 'need exactly client<->server and server<->cloud'))
    for link in dm.links:
        name = '<->'.join(site.value for site in link.endpoints)
        if link.latency_ms < 0:
            diagnostics.append(Diagnostic('BadLink', name, f"latency {link.latency_ms}"))
        if link.bandwidth_bytes_per_ms <= 0:
            diagnostics.append(Diagnostic('BadLink', name, f"bandwidth {link.bandwidth_bytes_per_ms}"))
    return diagnostics


def hops(source, target):
    """Links crossed going from source to target along the client-server-cloud line."""
    a, b = site_rank(source), site_rank(target)
    step = 1 if b > a else -1
    return [(SITE_ORDER[i], SITE_ORDER[i + step]) for i in range(a, b, step)]


def transfer_cost(dm, source, target, nbytes):
    """Milliseconds to move nbytes; zero when source and target coincide."""
    return sum(dm.link(a, b).transfer_time(nbytes) for a, b in hops(source, target))


def fits(dm, placements):
    """site -> whether the bytes placed there stay within its budget."""
    result = {}
    for site in dm.sites:
        placed = placements.get(site.id, placements.get(site.id.value, 0))
        result[site.id] = site.unlimited or placed <= site.memory_budget_bytes
    return result
