# core/datasets.py
"""
Synthetic datasets and the interface specs that go with them.

Each generator returns a Dataset: the spec document (the same JSON shape a
designer would write) and one DataFrame per source. Everything is drawn from
numpy's default_rng(seed), so a (name, seed, options) triple always yields
the same files.
"""
import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    name: str
    spec: dict
    tables: dict


def _scan(relation):
    return {'op': 'scan', 'id': relation, 'relation': relation}


def _equals(column, choice_id):
    return {'column': column, 'op': '=', 'operand': {'choice': choice_id}}


def _between(column, low_id, high_id):
    return {'column': column, 'between': [{'choice': low_id}, {'choice': high_id}]}


def _interval_choice(choice_id, low, high, step=1, default=None):
    decl = {'choice_id': choice_id, 'value_type': 'int64', 'interval': {'low': low, 'high': high, 'step': step}}
    if default is not None:
        decl['default'] = default
    return decl


def congress(seed=0, members=100, first_year=1990, last_year=2020, votes_per_year=4.0, senate_share=0.2):
    """Roll-call votes per member and year; one view counting votes per member."""
    rng = np.random.default_rng(seed)
    names = [f"member_{index:03d}" for index in range(members)]
    senators = max(1, int(round(members * senate_share)))
    chambers = ['house'] * (members - senators) + ['senate'] * senators

    years = np.arange(first_year, last_year + 1)
    per_cell = rng.poisson(votes_per_year, size=(members, len(years)))
    member_index = np.repeat(np.arange(members), per_cell.sum(axis=1))
    year_index = np.concatenate([np.repeat(years, row) for row in per_cell])
    votes = pd.DataFrame({
        'name': np.array(names)[member_index],
        'chamber': np.array(chambers)[member_index],
        'date': year_index.astype(np.int64),
        'vote': rng.choice(['yea', 'nay'], size=len(member_index), p=[0.6, 0.4]),
    })

    plan = {
        'op': 'group_by', 'id': 'counts', 'keys': ['name'],
        'aggregates': [{'func': 'count', 'alias': 'vote_count'}],
        'input': {
            'op': 'filter', 'id': 'by_date', 'predicate': _between('date', 'start', 'end'),
            'input': {
                'op': 'filter', 'id': 'by_chamber', 'predicate': _equals('chamber', 'chamber'),
                'input': _scan('votes'),
            },
        },
    }
    spec = {
        'spec_version': 1,
        'sources': [{
            'name': 'votes', 'path': 'votes.csv',
            'schema': [['name', 'string'], ['chamber', 'string'], ['date', 'int64'], ['vote', 'string']],
        }],
        'views': [{
            'name': 'member_votes',
            'plan': plan,
            'choices': [
                {'choice_id': 'chamber', 'value_type': 'string', 'values': ['house', 'senate']},
                _interval_choice('start', first_year, last_year),
                _interval_choice('end', first_year, last_year, default=last_year),
            ],
            'constraints': [{'lower': 'start', 'upper': 'end'}],
        }],
        'interactions': [
            {'name': 'chamber_dropdown', 'bound_choices': ['chamber'], 'kind': 'discrete',
             'latency_bound_ms': 500.0, 'view': 'member_votes'},
            {'name': 'date_slider', 'bound_choices': ['start', 'end'], 'kind': 'continuous',
             'latency_bound_ms': 20.0, 'view': 'member_votes'},
        ],
    }
    return Dataset('congress', spec, {'votes': votes})


def flights(seed=0, rows=10 ** 6, carriers=10, max_distance=2500, step=100, null_share=0.05):
    """Delays per carrier under a distance range slider."""
    rng = np.random.default_rng(seed)
    codes = [f"C{index:02d}" for index in range(carriers)]
    delay = np.round(rng.normal(10.0, 25.0, size=rows), 2)
    table = pd.DataFrame({
        'carrier': rng.choice(codes, size=rows),
        'distance': (rng.integers(1, max_distance // step + 1, size=rows) * step).astype(np.int64),
        'delay': pd.array(delay, dtype='Float64'),
    })
    table.loc[rng.random(rows) < null_share, 'delay'] = pd.NA

    plan = {
        'op': 'group_by', 'id': 'delays', 'keys': ['carrier'],
        'aggregates': [{'func': 'count', 'alias': 'flights'}, {'func': 'avg', 'column': 'delay', 'alias': 'avg_delay'}],
        'input': {'op': 'filter', 'id': 'by_distance', 'predicate': _between('distance', 'min_distance', 'max_distance'),
                  'input': _scan('flights')},
    }
    spec = {
        'spec_version': 1,
        'sources': [{
            'name': 'flights', 'path': 'flights.csv',
            'schema': [['carrier', 'string'], ['distance', 'int64'], ['delay', 'float64']],
        }],
        'views': [{
            'name': 'carrier_delays',
            'plan': plan,
            'choices': [
                _interval_choice('min_distance', step, max_distance, step),
                _interval_choice('max_distance', step, max_distance, step, default=max_distance),
            ],
            'constraints': [{'lower': 'min_distance', 'upper': 'max_distance'}],
        }],
        'interactions': [
            {'name': 'distance_slider', 'bound_choices': ['min_distance', 'max_distance'], 'kind': 'continuous',
             'latency_bound_ms': 20.0, 'view': 'carrier_delays'},
        ],
    }
    return Dataset('flights', spec, {'flights': table})


def catalog(seed=0, rows=2000, categories=5):
    """Single-view filter: products of the selected category."""
    rng = np.random.default_rng(seed)
    names = [f"category_{index}" for index in range(categories)]
    products = pd.DataFrame({
        'product_id': np.arange(rows, dtype=np.int64),
        'category': rng.choice(names, size=rows),
        'price': np.round(rng.uniform(1.0, 500.0, size=rows), 2),
    })
    spec = {
        'spec_version': 1,
        'sources': [{
            'name': 'products', 'path': 'products.csv',
            'schema': [['product_id', 'int64'], ['category', 'string'], ['price', 'float64']],
        }],
        'views': [{
            'name': 'product_list',
            'plan': {
                'op': 'project', 'id': 'columns', 'columns': ['product_id', 'price'],
                'input': {'op': 'filter', 'id': 'by_category', 'predicate': _equals('category', 'category'),
                          'input': _scan('products')},
            },
            'choices': [{'choice_id': 'category', 'value_type': 'string', 'values': names}],
        }],
        'interactions': [
            {'name': 'category_dropdown', 'bound_choices': ['category'], 'kind': 'discrete',
             'latency_bound_ms': 200.0, 'view': 'product_list'},
        ],
    }
    return Dataset('catalog', spec, {'products': products})


def sales(seed=0, orders=5000, customers=200, regions=4, first_year=2015, last_year=2024):
    """Key-FK join: revenue per year for customers of one region."""
    rng = np.random.default_rng(seed)
    region_names = [f"region_{index}" for index in range(regions)]
    customer_table = pd.DataFrame({
        'customer_id': np.arange(customers, dtype=np.int64),
        'region': rng.choice(region_names, size=customers),
    })
    order_table = pd.DataFrame({
        'order_id': np.arange(orders, dtype=np.int64),
        'customer_id': rng.integers(0, customers, size=orders).astype(np.int64),
        'amount': np.round(rng.gamma(2.0, 40.0, size=orders), 2),
        'year': rng.integers(first_year, last_year + 1, size=orders).astype(np.int64),
    })
    plan = {
        'op': 'group_by', 'id': 'revenue', 'keys': ['year'],
        'aggregates': [{'func': 'sum', 'column': 'amount', 'alias': 'revenue'}],
        'input': {
            'op': 'filter', 'id': 'by_region', 'predicate': _equals('region', 'region'),
            'input': {
                'op': 'join', 'id': 'order_customers', 'keys': [['customer_id', 'customer_id']], 'max_fanout': 1,
                'left': _scan('orders'), 'right': _scan('customers'),
            },
        },
    }
    spec = {
        'spec_version': 1,
        'sources': [
            {'name': 'orders', 'path': 'orders.csv',
             'schema': [['order_id', 'int64'], ['customer_id', 'int64'], ['amount', 'float64'], ['year', 'int64']]},
            {'name': 'customers', 'path': 'customers.csv',
             'schema': [['customer_id', 'int64'], ['region', 'string']]},
        ],
        'views': [{
            'name': 'regional_revenue',
            'plan': plan,
            'choices': [{'choice_id': 'region', 'value_type': 'string', 'values': region_names}],
        }],
        'interactions': [
            {'name': 'region_dropdown', 'bound_choices': ['region'], 'kind': 'discrete',
             'latency_bound_ms': 200.0, 'view': 'regional_revenue'},
        ],
    }
    return Dataset('sales', spec, {'orders': order_table, 'customers': customer_table})


def tags(seed=0, posts=300, tag_count=8, likes=1500):
    """N-M join: likes per tag through posts that carry many tags and many likes."""
    rng = np.random.default_rng(seed)
    tag_names = [f"tag_{index}" for index in range(tag_count)]
    per_post = rng.integers(1, 4, size=posts)
    post_tags = pd.DataFrame({
        'post_id': np.repeat(np.arange(posts, dtype=np.int64), per_post),
        'tag': np.concatenate([rng.choice(tag_names, size=count, replace=False) for count in per_post]),
    })
    post_likes = pd.DataFrame({
        'post_id': rng.integers(0, posts, size=likes).astype(np.int64),
        'liker': rng.integers(0, 500, size=likes).astype(np.int64),
    })
    plan = {
        'op': 'group_by', 'id': 'likes_per_tag', 'keys': ['tag'],
        'aggregates': [{'func': 'count', 'alias': 'likes'}],
        'input': {
            'op': 'filter', 'id': 'by_tag', 'predicate': _equals('tag', 'tag'),
            'input': {
                'op': 'join', 'id': 'tagged_likes', 'keys': [['post_id', 'post_id']],
                'left': _scan('post_tags'), 'right': _scan('post_likes'),
            },
        },
    }
    spec = {
        'spec_version': 1,
        'sources': [
            {'name': 'post_tags', 'path': 'post_tags.csv', 'schema': [['post_id', 'int64'], ['tag', 'string']]},
            {'name': 'post_likes', 'path': 'post_likes.csv', 'schema': [['post_id', 'int64'], ['liker', 'int64']]},
        ],
        'views': [{
            'name': 'tag_likes',
            'plan': plan,
            'choices': [{'choice_id': 'tag', 'value_type': 'string', 'values': tag_names}],
        }],
        'interactions': [
            {'name': 'tag_dropdown', 'bound_choices': ['tag'], 'kind': 'discrete',
             'latency_bound_ms': 500.0, 'view': 'tag_likes'},
        ],
    }
    return Dataset('tags', spec, {'post_tags': post_tags, 'post_likes': post_likes})


GENERATORS = {
    'congress': congress,
    'flights': flights,
    'catalog': catalog,
    'sales': sales,
    'tags': tags,
}


def generate(name, seed=0, **options):
    if name not in GENERATORS:
        raise KeyError(f"Unknown dataset '{name}'; choose from {sorted(GENERATORS)}")
    return GENERATORS[name](seed=seed, **options)


def write_dataset(dataset, out_dir):
    """CSV per source (empty cell for null) plus spec.json; returns the spec path."""
    from .services import write_json
    os.makedirs(out_dir, exist_ok=True)
    for source in dataset.spec['sources']:
        frame = dataset.tables[source['name']]
        frame.to_csv(os.path.join(out_dir, source['path']), index=False, na_rep='')
    spec_path = write_json(os.path.join(out_dir, 'spec.json'), dataset.spec)
    logger.info(f"Wrote dataset '{dataset.name}' ({sum(len(t) for t in dataset.tables.values())} rows) to {out_dir}")
    return spec_path
