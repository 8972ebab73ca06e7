# -*- coding: utf-8 -*-
"""App unit tests.

Set ALOHALAB_SLOW_TESTS to include the simulation-heavy validation suites.

-------

This program is free software: you can redistribute it and/or modify it under
the terms of the GNU General Public License as published by the Free Software
Foundation, either version 3 of the License, or (at your option) any later
version.

This program is distributed in the hope that it will be useful, but WITHOUT ANY
WARRANTY; without even the implied warranty of MERCHANTABILITY or FITNESS FOR A
PARTICULAR PURPOSE. See the GNU General Public License for more details.

You should have received a copy of the GNU General Public License along with
this program. If not, see <https://www.gnu.org/licenses/>.

"""

import dataclasses
import json
import math
import os
import tempfile
import unittest
from argparse import ArgumentTypeError
from io import StringIO
from itertools import islice
from pathlib import Path
from unittest import mock

import numpy as np
import yaml
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from scipy.special import lambertw

from alohalab import conf
from alohalab.cli import (CommandName, OutputFormat, QGrid, ScenarioSpec,
                          analyze, column_names, emit, regions_record,
                          sweep_rows)
from alohalab.errors import (DomainError, NoStablePointsError, OutputError,
                             SingularityError)
from alohalab.lambert_w import (BRANCH_POINT, WBranch, w0, w0_series, wm1,
                                wm1_series)
from alohalab.regions import (Classification, Method, Mode, classify,
                              epsilon_bounds, half_factor_rate_threshold,
                              max_stable_throughput, pseudo_region, q_lower,
                              q_lower_approx, q_upper, q_upper_star,
                              q_upper_star_approx, standard_normal_cdf)
from alohalab.simulator import (NO_WINNER, Outcome, RandomStreams, SimConfig,
                                SlotDraws, SlottedAlohaNetwork,
                                capture_statistics, row_seeds, run,
                                standard_error, sweep)
from alohalab.steady_state import (E_INVERSE, UNBOUNDED, NetworkConfig,
                                   Verdict, as_cutoff, attempt_rate,
                                   clamp_probability, dynamics,
                                   finite_population_success,
                                   inverse_service_rate, iterate_dynamics,
                                   offered_load, p_a_closed_form_exp,
                                   p_a_closed_form_geo, p_l_series,
                                   p_s_linear_approx, phase_distribution,
                                   require_stable_points,
                                   saturated_fixed_point, saturated_map,
                                   stable_points, success_map,
                                   throughput_of_attempt_rate)
from alohalab.util import file as types
from alohalab.util.misc import (check_schema, field_order_fn, plain,
                                text_cell)
from alohalab.validation import (CheckResult, kinds, load_catalogue,
                                 run_suite, run_suites)

SLOW = bool(os.environ.get('ALOHALAB_SLOW_TESTS'))

# A recurring example: 50 nodes offering 0.3 packets per slot in total.
N, RATE = 50, 0.3


class _LambertW(SimpleTestCase):

    def test_principal_against_scipy(self):
        for z in (-0.3678, -0.3, -0.1, -1e-8, 1e-8, 0.2, 1.0, 10.0, 1e6):
            self.assertAlmostEqual(w0(z),
                                   lambertw(z, 0).real,
                                   delta=1e-9 * max(1, abs(w0(z))))

    def test_lower_against_scipy(self):
        for z in (-0.3678, -0.3, -0.1, -1e-3, -1e-8, -1e-12):
            self.assertAlmostEqual(wm1(z),
                                   lambertw(z, -1).real,
                                   delta=1e-9 * abs(wm1(z)))

    def test_identity(self):
        for z in np.linspace(-0.36, 5, 40):
            w = w0(z)
            self.assertAlmostEqual(w * math.exp(w),
                                   z,
                                   delta=1e-11 * max(1, z))

    def test_branch_point(self):
        self.assertEqual(w0(BRANCH_POINT), -1.0)
        self.assertEqual(wm1(BRANCH_POINT), -1.0)
        self.assertEqual(wm1(BRANCH_POINT - 1e-16), -1.0)

    def test_branches_order(self):
        for z in (-0.36, -0.2, -0.01):
            self.assertGreater(w0(z), -1)
            self.assertLess(wm1(z), -1)

    def test_domain(self):
        with self.assertRaises(DomainError):
            w0(-0.5)
        with self.assertRaises(DomainError):
            wm1(0.0)
        with self.assertRaises(DomainError):
            w0(math.nan)

    def test_enum(self):
        self.assertEqual(WBranch.PRINCIPAL.evaluate(1.0), w0(1.0))
        self.assertEqual(WBranch.MINUS_ONE.evaluate(-0.2), wm1(-0.2))

    def test_series(self):
        self.assertAlmostEqual(w0_series(0.01), w0(0.01), places=9)
        self.assertAlmostEqual(wm1_series(-0.367), wm1(-0.367), places=5)


class _StablePoints(SimpleTestCase):

    def test_reference(self):
        points = stable_points(RATE)
        self.assertTrue(points.defined)
        self.assertAlmostEqual(points.p_l, 0.61299272, places=7)
        self.assertAlmostEqual(points.p_s, 0.16841282, places=7)

    def test_fixed_point_residual(self):
        for rate in np.linspace(1e-6, E_INVERSE, 25):
            points = stable_points(rate)
            for p in (points.p_l, points.p_s):
                self.assertAlmostEqual(p, math.exp(-rate / p), places=10)
            self.assertLessEqual(points.p_s, E_INVERSE + 1e-12)
            self.assertGreaterEqual(points.p_l, E_INVERSE - 1e-12)

    def test_merge_at_one_over_e(self):
        points = stable_points(E_INVERSE)
        self.assertAlmostEqual(points.p_l, E_INVERSE, places=12)
        self.assertAlmostEqual(points.p_s, E_INVERSE, places=12)

    def test_zero_rate(self):
        points = stable_points(0)
        self.assertEqual((points.p_l, points.p_s), (1.0, 0.0))
        self.assertTrue(points.degenerate)

    def test_undefined(self):
        self.assertFalse(stable_points(0.4).defined)
        with self.assertRaises(NoStablePointsError):
            require_stable_points(0.4)
        with self.assertRaises(DomainError):
            stable_points(-0.1)

    def test_approximations(self):
        self.assertAlmostEqual(p_l_series(0.05),
                               stable_points(0.05).p_l,
                               places=5)
        self.assertAlmostEqual(p_s_linear_approx(E_INVERSE),
                               E_INVERSE,
                               places=2)

    def test_finite_population(self):
        self.assertAlmostEqual(finite_population_success(10, 0.1),
                               0.9048,
                               places=3)
        self.assertAlmostEqual(finite_population_success(10, 0.3),
                               0.6555,
                               places=3)
        self.assertEqual(finite_population_success(1, 0.3), 1.0)
        self.assertGreater(finite_population_success(1000, 0.3),
                           stable_points(0.3).p_l)

    def test_attempts(self):
        self.assertAlmostEqual(attempt_rate(RATE, 0.6), 0.5)
        self.assertAlmostEqual(throughput_of_attempt_rate(1), E_INVERSE)
        # Throughput at G = λ̂/p_L returns λ̂.
        points = stable_points(RATE)
        self.assertAlmostEqual(
            throughput_of_attempt_rate(attempt_rate(RATE, points.p_l)), RATE)


class _Dynamics(SimpleTestCase):

    def test_converges_above_p_s(self):
        points = stable_points(RATE)
        for p_0 in (points.p_s + 0.01, 0.5, 0.99, 1.0):
            result = iterate_dynamics(p_0, RATE)
            self.assertIs(result.verdict, Verdict.CONVERGED_TO_PL)
            self.assertAlmostEqual(result.final, points.p_l, places=9)

    def test_diverges_below_p_s(self):
        points = stable_points(RATE)
        result = iterate_dynamics(points.p_s - 0.01, RATE)
        self.assertIs(result.verdict, Verdict.DIVERGED_BELOW_PS)

    def test_monotone_trajectories(self):
        points = stable_points(RATE)
        rising = np.diff(iterate_dynamics(0.3, RATE).trajectory)
        self.assertGreater(rising[0], 0)
        self.assertTrue(np.all(rising >= 0))

        trajectory = iterate_dynamics(0.99, RATE).trajectory
        self.assertTrue(np.all(np.diff(trajectory) <= 0))
        self.assertTrue(all(p > points.p_l for p in trajectory))

        falling = np.diff(list(islice(dynamics(points.p_s - 0.01, RATE), 6)))
        self.assertTrue(np.all(falling < 0))

    def test_no_stable_points(self):
        result = iterate_dynamics(0.9, 0.5, max_steps=20)
        self.assertIs(result.verdict, Verdict.UNDECIDED)
        self.assertEqual(result.steps, 20)

    def test_map(self):
        self.assertEqual(success_map(0.0, 0.1), 0.0)
        self.assertEqual(success_map(0.0, 0.0), 1.0)
        self.assertAlmostEqual(success_map(0.5, 0.1), math.exp(-0.2))


class _PhaseModel(SimpleTestCase):

    def test_normalised(self):
        for cutoff in (1, 2, 4, 16):
            dist = phase_distribution(0.6, 0.3, cutoff)
            self.assertAlmostEqual(dist.f.sum(), 1.0, places=12)
            self.assertAlmostEqual(dist.f0,
                                   1 / inverse_service_rate(0.6, 0.3, cutoff),
                                   places=12)
            self.assertAlmostEqual(dist.phase_given_backlogged.sum(),
                                   1.0,
                                   places=12)

    def test_extreme_parameters(self):
        dist = phase_distribution(1e-6, 1e-3, 32)
        self.assertTrue(np.all(np.isfinite(dist.f)))
        self.assertAlmostEqual(dist.f.sum(), 1.0, places=12)

    def test_no_backlog_at_certain_success(self):
        dist = phase_distribution(1.0, 0.5, 4)
        self.assertEqual(dist.f0, 1.0)
        self.assertIsNone(dist.phase_given_backlogged)
        self.assertEqual(dist.backlogged_attempt_mass(), 0.0)

    def test_unbounded_geometric(self):
        dist = phase_distribution(0.7, 0.5, UNBOUNDED)
        self.assertAlmostEqual(dist.f0, 1 - 0.3 / 0.5)
        self.assertAlmostEqual(dist.f_at(3), dist.f0 * 0.6**3)
        self.assertAlmostEqual(dist.truncated(200).sum(), 1.0, places=12)

    def test_unbounded_singular(self):
        with self.assertRaises(SingularityError):
            inverse_service_rate(0.5, 0.5, UNBOUNDED)

    def test_backlogged_attempt_mass(self):
        for cutoff in (1, 3, 8):
            dist = phase_distribution(0.6, 0.4, cutoff)
            direct = sum(
                dist.phi_at(i) * 0.4**i for i in range(1, cutoff + 1))
            self.assertAlmostEqual(dist.backlogged_attempt_mass(),
                                   direct,
                                   places=12)

    def test_balance(self):
        p, q = 0.6, 0.3
        for cutoff in (1, 2, 4, 8):
            f = phase_distribution(p, q, cutoff).f
            for i in range(1, cutoff):
                self.assertAlmostEqual(f[i] * q**i,
                                       f[i - 1] * q**(i - 1) * (1 - p),
                                       places=12)
            self.assertAlmostEqual(f[cutoff] * q**cutoff * p,
                                   f[cutoff - 1] * q**(cutoff - 1) * (1 - p),
                                   places=12)

    def test_offered_load(self):
        config = NetworkConfig(10, 0.1, 1, 0.1)
        self.assertAlmostEqual(
            offered_load(config, 0.9),
            0.01 * inverse_service_rate(0.9, 0.1, 1))

    def test_offered_load_monotone(self):
        qs = np.linspace(0.15, 0.95, 17)
        for cutoff in (1, 2, 4, UNBOUNDED):
            loads = [offered_load(NetworkConfig(10, 0.1, cutoff, q), 0.9)
                     for q in qs]
            self.assertTrue(np.all(np.diff(loads) < 0))
        for q in (0.2, 0.5, 0.9):
            loads = [offered_load(NetworkConfig(10, 0.1, cutoff, q), 0.9)
                     for cutoff in (1, 2, 4, 8, UNBOUNDED)]
            self.assertTrue(np.all(np.diff(loads) >= 0))


class _Configuration(SimpleTestCase):

    def test_cutoff_spellings(self):
        for value in ('inf', 'Infinity', '∞', math.inf, UNBOUNDED):
            self.assertIs(as_cutoff(value), UNBOUNDED)
        self.assertEqual(as_cutoff('4'), 4)
        self.assertEqual(as_cutoff(2.0), 2)
        self.assertEqual(str(UNBOUNDED), 'inf')
        for value in ('0', 'x', 1.5, True):
            with self.assertRaises(DomainError):
                as_cutoff(value)

    def test_network_config(self):
        config = NetworkConfig(N, RATE, UNBOUNDED, 0.4)
        self.assertAlmostEqual(config.rate, 0.006)
        self.assertTrue(config.unbounded)
        for bad in (dict(n=0), dict(q=1.0), dict(q=0.0),
                    dict(aggregate_rate=-1), dict(cutoff=0),
                    dict(aggregate_rate=60)):
            parameters = dict(n=N, aggregate_rate=RATE, cutoff=1, q=0.5)
            parameters.update(bad)
            with self.assertRaises(DomainError):
                NetworkConfig(**parameters)

    def test_clamp(self):
        with self.assertLogs(level='WARNING'):
            self.assertEqual(clamp_probability(1 + 1e-12, 'p'), 1.0)
        self.assertEqual(clamp_probability(0.5, 'p'), 0.5)

    def test_setting_precedence(self):
        self.assertEqual(conf.setting('ALOHALAB_WORKERS'), 1)
        with mock.patch.dict(os.environ, {'ALOHA_LAB_SEED': '7'}):
            self.assertEqual(conf.setting('ALOHALAB_SEED'), 7)
        with self.settings(ALOHALAB_SEED=11):
            self.assertEqual(conf.setting('ALOHALAB_SEED'), 11)
        with mock.patch.dict(os.environ, {'ALOHA_LAB_SEED': 'x'}):
            with self.assertRaises(DomainError):
                conf.setting('ALOHALAB_SEED')


class _Regions(SimpleTestCase):

    def test_geometric(self):
        self.assertAlmostEqual(q_lower(N, RATE, 1), 0.0038109, places=6)
        self.assertAlmostEqual(q_upper(N, RATE), 0.035627, places=5)
        self.assertAlmostEqual(q_upper_star(N, RATE, 1), q_upper(N, RATE))

    def test_exponential(self):
        self.assertAlmostEqual(q_lower(N, RATE, UNBOUNDED), 0.38933, places=4)
        self.assertAlmostEqual(q_upper_star(N, RATE, UNBOUNDED),
                               0.408846,
                               places=5)
        lower, upper = pseudo_region(RATE)
        self.assertAlmostEqual(lower, 1 - 0.61299272, places=7)
        self.assertAlmostEqual(upper, 1 - 0.16841282, places=7)

    def test_finite_cutoff(self):
        self.assertAlmostEqual(q_lower(N, RATE, 2), 0.0395896, places=6)
        self.assertAlmostEqual(q_upper_star(N, RATE, 2), 0.128848, places=5)
        self.assertAlmostEqual(q_lower(N, RATE, 4), 0.130146, places=5)
        self.assertAlmostEqual(q_upper_star(N, RATE, 4), 0.24691, places=4)

    def test_unit_load_at_lower_bound(self):
        p_l = stable_points(RATE).p_l
        for cutoff in (1, 2, 4, UNBOUNDED):
            config = NetworkConfig(N, RATE, cutoff, q_lower(N, RATE, cutoff))
            self.assertAlmostEqual(offered_load(config, p_l), 1.0, places=8)

    def test_large_population_approximations(self):
        n, rate = 10_000, 0.05
        self.assertAlmostEqual(q_lower(n, rate, 4), 0.0024891752, places=9)
        self.assertAlmostEqual(q_lower_approx(n, rate, 4),
                               0.0024599723,
                               places=9)
        self.assertAlmostEqual(q_upper_star(n, rate, 4),
                               0.017275892,
                               places=8)
        self.assertAlmostEqual(q_upper_star_approx(n, rate, 4),
                               0.015708913,
                               places=8)
        self.assertAlmostEqual(q_upper(n, rate), 0.00044997553, places=10)

    def test_vanishing_regions(self):
        n = 1_000_000
        self.assertLess(q_upper(n, 0.1), 1e-4)
        for cutoff in (1, 2):
            self.assertLess(q_lower(n, 0.1, cutoff), 1e-4)
        # q_l outgrows q_u for K = 2, leaving no absolute region at all.
        self.assertGreater(q_lower(n, 0.1, 2), q_upper(n, 0.1))

    def test_regions_shrink_with_rate(self):
        rates = (0.05, 0.1, 0.2, 0.3, 0.35)
        uppers = [q_upper(N, rate) for rate in rates]
        self.assertTrue(np.all(np.diff(uppers) < 0))
        for cutoff in (1, 2, 4, UNBOUNDED):
            lowers = [q_lower(N, rate, cutoff) for rate in rates]
            self.assertTrue(np.all(np.diff(lowers) > 0))
        widths = [upper - q_lower(N, rate, 1)
                  for rate, upper in zip(rates, uppers)]
        self.assertTrue(np.all(np.diff(widths) < 0))
        pseudo = [upper - lower for lower, upper in map(pseudo_region, rates)]
        self.assertTrue(np.all(np.diff(pseudo) < 0))

    def test_asymptotic_region_collapses(self):
        p_l = stable_points(RATE).p_l
        for n in (100, 10_000, 1_000_000):
            lower = q_lower(n, RATE, UNBOUNDED)
            gap = q_upper_star(n, RATE, UNBOUNDED) - lower
            self.assertAlmostEqual(n * gap, 0.976, delta=2e-3)
            self.assertAlmostEqual(lower, 1 - p_l, delta=RATE / n)

    def test_zero_rate(self):
        self.assertEqual(q_upper(N, 0.0), 1.0)
        self.assertEqual(q_lower(N, 0.0, 4), 0.0)

    def test_half_factor(self):
        for n in (4, 8, 16):
            threshold = half_factor_rate_threshold(n)
            self.assertGreater(q_upper(n, 0.99 * threshold), 0.5)
            self.assertLess(q_upper(n, 1.01 * threshold), 0.5)

    def test_too_few_nodes(self):
        with self.assertRaises(DomainError):
            q_upper(1, RATE)


class _Classification(SimpleTestCase):

    def _classify(self, cutoff, q):
        return classify(NetworkConfig(N, RATE, cutoff, q))

    def test_absolute(self):
        report = self._classify(1, 0.02)
        self.assertIs(report.classification, Classification.ABSOLUTE)
        self.assertTrue(report.is_stable)
        self.assertAlmostEqual(report.predicted_throughput, RATE)
        self.assertAlmostEqual(report.predicted_success,
                               stable_points(RATE).p_l)
        self.assertIsNone(report.saturated)

    def test_asymptotic(self):
        report = self._classify(UNBOUNDED, 0.4)
        self.assertIs(report.classification, Classification.ASYMPTOTIC)
        self.assertIsNotNone(report.epsilon_bound)
        self.assertLess(report.epsilon_bound, 0.01)

    def test_pseudo(self):
        report = self._classify(UNBOUNDED, 0.6)
        self.assertIs(report.classification, Classification.PSEUDO)
        self.assertFalse(report.is_stable)
        self.assertAlmostEqual(report.predicted_throughput, RATE)
        self.assertIsNotNone(report.saturated)

    def test_beyond_pseudo(self):
        report = self._classify(UNBOUNDED, 0.9)
        self.assertIs(report.classification, Classification.UNSTABLE)
        self.assertAlmostEqual(report.predicted_throughput,
                               -0.1 * math.log(0.1),
                               places=9)

    def test_geometric_collapse(self):
        report = self._classify(1, 0.1)
        self.assertIs(report.classification, Classification.UNSTABLE)
        self.assertAlmostEqual(report.predicted_throughput,
                               5 * math.exp(-5),
                               places=9)

    def test_empty_absolute_region(self):
        report = self._classify(2, 0.05)
        self.assertTrue(report.absolute_region_empty)
        self.assertIs(report.classification, Classification.UNSTABLE)
        self.assertIsNone(report.pseudo_lower)

    def test_no_stable_points(self):
        report = classify(NetworkConfig(N, 0.5, 1, 0.1))
        self.assertIs(report.classification, Classification.UNSTABLE)
        self.assertIsNone(report.q_lower)
        self.assertTrue(report.notes)


class _MaxThroughput(SimpleTestCase):

    def test_exponential(self):
        for n, expected in ((100, 0.0451856), (1000, 0.00688725),
                            (10_000, 0.000920656)):
            result = max_stable_throughput(n, UNBOUNDED)
            self.assertIs(result.method, Method.EXACT_ROOT)
            self.assertAlmostEqual(result.lambda_max / expected, 1, places=4)
            self.assertAlmostEqual(result.lambda_max / (math.log(n) / n),
                                   1,
                                   delta=0.03)

    def test_geometric_stays_open(self):
        for n in (10, 100, 1000):
            result = max_stable_throughput(n, 1)
            self.assertEqual(result.lambda_max, E_INVERSE)
            self.assertAlmostEqual(result.q_at_max, 1 / n, places=9)
            self.assertIs(result.method, Method.APPROXIMATION)

    def test_asymptotic_corner(self):
        result = max_stable_throughput(1000, UNBOUNDED, Mode.ASYMPTOTIC)
        self.assertEqual(result.lambda_max, E_INVERSE)
        self.assertAlmostEqual(result.q_at_max, 1 - E_INVERSE, delta=1e-3)

    def test_finite_cutoff(self):
        exact = max_stable_throughput(10_000, 4)
        self.assertAlmostEqual(exact.lambda_max, 0.0161861, places=6)
        approximate = max_stable_throughput(10_000,
                                            4,
                                            method=Method.APPROXIMATION)
        self.assertAlmostEqual(approximate.lambda_max / exact.lambda_max,
                               0.427,
                               delta=0.01)
        with self.assertRaises(DomainError):
            max_stable_throughput(10_000, 4, Mode.ASYMPTOTIC,
                                  Method.APPROXIMATION)


class _EpsilonBounds(SimpleTestCase):

    def test_reference(self):
        bounds = epsilon_bounds(N, N, RATE, 0.4, delta=0.05)
        self.assertAlmostEqual(bounds.markov, 0.5949, delta=1e-3)
        self.assertAlmostEqual(bounds.clt, 0.0076, delta=2e-4)

    def test_markov_shrinks_with_fewer_backlogged(self):
        full = epsilon_bounds(N, N, RATE, 0.4).markov
        half = epsilon_bounds(N, N // 2, RATE, 0.4).markov
        self.assertLess(half, full)

    def test_domain(self):
        with self.assertRaises(DomainError):
            epsilon_bounds(N, N + 1, RATE, 0.4)
        with self.assertRaises(DomainError):
            epsilon_bounds(N, N, RATE, 0.4, delta=0)

    def test_normal_cdf(self):
        self.assertAlmostEqual(standard_normal_cdf(0), 0.5)
        self.assertAlmostEqual(standard_normal_cdf(1.959964), 0.975, places=6)


class _Saturation(SimpleTestCase):

    def test_monotone_in_cutoff(self):
        expected = {2: 0.0103007, 4: 0.281143, 8: 0.52223, 16: 0.628732}
        for cutoff, value in expected.items():
            point = saturated_fixed_point(N, 0.3, cutoff)
            self.assertTrue(point.converged)
            self.assertAlmostEqual(point.p_a, value, delta=1e-5)

    def test_geometric_closed_form(self):
        point = saturated_fixed_point(N, 0.1, 1)
        self.assertAlmostEqual(point.p_a, 0.00654, delta=1e-5)
        self.assertAlmostEqual(point.p_a / p_a_closed_form_geo(N, 0.1),
                               1,
                               delta=0.05)

    def test_exponential_closed_form(self):
        for q in (0.5, 0.8):
            point = saturated_fixed_point(N, q, UNBOUNDED)
            self.assertAlmostEqual(point.p_a / p_a_closed_form_exp(N, q),
                                   1,
                                   delta=0.01)
        point = saturated_fixed_point(1_000_000, 0.8, UNBOUNDED)
        self.assertAlmostEqual(point.p_a, 0.2, delta=1e-4)

    def test_map_decreases(self):
        for cutoff, q, low in ((1, 0.3, 0.05), (4, 0.3, 0.05),
                               (UNBOUNDED, 0.8, 0.25)):
            values = [saturated_map(p, N, q, cutoff)
                      for p in np.linspace(low, 0.95, 15)]
            self.assertTrue(np.all(np.diff(values) < 0))

    def test_orbit_alternates(self):
        orbit = [0.5]
        for _ in range(3):
            orbit.append(saturated_map(orbit[-1], N, 0.3, 1))
        self.assertEqual(list(np.sign(np.diff(orbit))), [-1, 1, -1])

    def test_collapse_at_large_n(self):
        self.assertLess(saturated_fixed_point(100_000, 0.3, 4).p_a, 1e-3)

    def test_finite_population(self):
        point = saturated_fixed_point(N, 0.3, 4, finite_population=True)
        self.assertAlmostEqual(point.p_a, 0.28213, delta=1e-4)

    def test_too_few_nodes(self):
        with self.assertRaises(DomainError):
            saturated_fixed_point(1, 0.3, 4)


class _Simulator(SimpleTestCase):

    def _config(self, cutoff=1, q=0.1, **kwargs):
        parameters = dict(seed=3, warmup_slots=500, measure_slots=5_000)
        parameters.update(kwargs)
        return SimConfig(NetworkConfig(10, 0.1, cutoff, q), **parameters)

    def test_step(self):
        state = SlottedAlohaNetwork(NetworkConfig(3, 0.3, 1, 0.5))
        outcome = state.step(
            SlotDraws(np.array([0.1, 0.2, 0.9]),
                      np.array([True, True, False])))
        self.assertIs(outcome.outcome, Outcome.COLLISION)
        self.assertEqual(outcome.nodes, (0, 1))
        self.assertEqual(list(state.phase), [1, 1, 0])

        outcome = state.step(
            SlotDraws(np.array([0.4, 0.6, 0.0]), np.zeros(3, dtype=bool)))
        self.assertIs(outcome.outcome, Outcome.SUCCESS)
        self.assertEqual(outcome.nodes, (0, ))
        self.assertEqual(list(state.queue), [0, 1, 0])
        self.assertEqual(state.node(0).queue_length, 0)
        self.assertEqual(state.node(1).hol_phase, 1)

        outcome = state.step(
            SlotDraws(np.array([0.9, 0.9, 0.0]), np.zeros(3, dtype=bool)))
        self.assertIs(outcome.outcome, Outcome.IDLE)

    def test_cutoff_caps_phase(self):
        state = SlottedAlohaNetwork(NetworkConfig(2, 0.2, 1, 0.5),
                                    saturated=True)
        for _ in range(3):
            state.step(SlotDraws(np.zeros(2)))
        self.assertEqual(list(state.phase), [1, 1])
        self.assertEqual(list(state.queue), [1, 1])

    def test_conservation(self):
        metrics = run(self._config())
        self.assertEqual(
            metrics.arrivals_total - metrics.departures_total,
            metrics.final_queue_lengths.sum())
        self.assertEqual(
            metrics.successes + metrics.collisions + metrics.idle_slots,
            metrics.slots)
        self.assertEqual(metrics.node_attempts.sum(), metrics.attempts)
        self.assertEqual(metrics.phase_histogram.sum(),
                         metrics.busy_node_slots)
        self.assertAlmostEqual(metrics.empirical_phases.sum(), 1.0)

    def test_determinism(self):
        config = self._config(cutoff=UNBOUNDED, q=0.2)
        self.assertTrue(run(config).identical(run(config)))
        other = run(self._config(cutoff=UNBOUNDED, q=0.2, seed=4))
        self.assertFalse(run(config).identical(other))

    def test_node_streams_do_not_depend_on_node_count(self):
        a, _ = RandomStreams(5, 3).chunk(10, 0.1)
        b, _ = RandomStreams(5, 4).chunk(10, 0.1)
        self.assertTrue(np.array_equal(a[:, 1], b[:, 1]))

    def test_saturated(self):
        metrics = run(self._config(cutoff=4, q=0.3, saturated=True))
        self.assertEqual(metrics.arrivals_total, 0)
        self.assertTrue(np.all(metrics.final_queue_lengths == 1))
        self.assertEqual(metrics.rho_hat, 1.0)

    def test_trace(self):
        metrics = run(self._config(trace_node=2))
        rows = list(metrics.trace_rows())
        self.assertEqual(len(rows), 5_000)
        self.assertEqual(rows[0][0], 500)
        stats = capture_statistics(metrics)
        self.assertEqual(stats.departures, metrics.node_successes[2])
        self.assertLessEqual(stats.longest_burst, stats.departures)
        winners = metrics.winner_trace[metrics.winner_trace != NO_WINNER]
        self.assertEqual(list(np.bincount(winners, minlength=10)),
                         list(metrics.node_successes))
        with self.assertRaises(DomainError):
            capture_statistics(run(self._config()))

    def test_burst_spans_idle_and_collided_slots(self):
        metrics = run(self._config(trace_node=2))
        winners = np.array([1, NO_WINNER, 1, 0, 1, 1, NO_WINNER, NO_WINNER,
                            1, 2, 2])
        metrics = dataclasses.replace(metrics, winner_trace=winners)

        stats = capture_statistics(metrics, 1)
        self.assertEqual((stats.longest_silence, stats.longest_burst,
                          stats.departures), (2, 3, 5))
        stats = capture_statistics(metrics, 0)
        self.assertEqual((stats.longest_silence, stats.longest_burst,
                          stats.departures), (7, 1, 1))
        stats = capture_statistics(metrics)
        self.assertEqual((stats.node, stats.longest_silence,
                          stats.longest_burst), (2, 9, 2))
        self.assertEqual(list(np.flatnonzero(metrics.departures_of(2))),
                         [9, 10])

    def test_stable_throughput(self):
        metrics = run(self._config(measure_slots=50_000))
        self.assertAlmostEqual(metrics.throughput_hat, 0.1, delta=0.01)
        self.assertGreater(standard_error(metrics), 0)

    def test_sweep(self):
        configs = [self._config(q=q) for q in (0.05, 0.1)]
        results = sweep(configs)
        self.assertEqual([q for q, _ in results], [0.05, 0.1])
        with self.assertRaises(DomainError):
            sweep([self._config(), self._config(cutoff=2)])

    def test_row_seeds(self):
        self.assertEqual(row_seeds(1, 3), row_seeds(1, 3))
        self.assertEqual(len(set(row_seeds(1, 10))), 10)

    def test_bad_config(self):
        with self.assertRaises(DomainError):
            self._config(measure_slots=0)
        with self.assertRaises(DomainError):
            self._config(trace_node=10)


class _ArgumentTypes(SimpleTestCase):

    def test_grid(self):
        self.assertEqual(types.q_grid('0.1:0.5:5'), (0.1, 0.5, 5, False))
        self.assertEqual(types.q_grid('0.01:0.5:3:log'), (0.01, 0.5, 3, True))
        self.assertEqual(
            types.q_grid(dict(start=0.1, stop=0.2, points=2, log=True)),
            (0.1, 0.2, 2, True))
        for bad in ('0.5:0.1:3', '0.1:0.5', '0.1:0.5:3:cubic', '0:0.5:3'):
            with self.assertRaises(ArgumentTypeError):
                types.q_grid(bad)

    def test_numbers(self):
        self.assertEqual(types.count('3'), 3)
        self.assertEqual(types.natural(0), 0)
        self.assertIs(types.cutoff_phase('inf'), UNBOUNDED)
        for function, bad in ((types.count, '0'), (types.natural, '-1'),
                              (types.probability, '1'), (types.rate, '-0.1'),
                              (types.count, '2.5'), (types.count, True),
                              (types.cutoff_phase, '0')):
            with self.assertRaises(ArgumentTypeError):
                function(bad)


class _Output(SimpleTestCase):

    def test_plain(self):
        self.assertEqual(plain(np.float64(0.1) + 0.2), 0.3)
        self.assertIsNone(plain(math.inf))
        self.assertEqual(plain(Classification.PSEUDO), 'pseudo')
        self.assertEqual(plain(UNBOUNDED), 'inf')
        self.assertIs(plain(np.bool_(True)), True)
        self.assertEqual(text_cell(None), '')
        self.assertEqual(text_cell(False), 'false')

    def test_field_order(self):
        order = field_order_fn(('b', 'a'))
        self.assertEqual(list(order(dict(a=1, c=2, b=3))), ['b', 'a'])
        self.assertEqual(order(dict(a=1)), dict(a=1))

    def test_csv(self):
        text = emit([dict(q=0.5, rho=None, extra=1)], ('q', 'rho'))
        self.assertEqual(text, 'q,rho\n0.5,\n')

    def test_json_schema(self):
        record = analyze(N, RATE, UNBOUNDED, 0.4)
        text = emit([record], column_names(CommandName.ANALYZE),
                    OutputFormat.JSON)
        document = json.loads(text)
        check_schema(document)
        self.assertEqual(document['rows'][0]['classification'], 'asymptotic')
        self.assertEqual(document['rows'][0]['K'], 'inf')

    def test_yaml(self):
        text = emit([dict(q=0.5)], ('q', 'rho'), OutputFormat.YAML)
        self.assertEqual(yaml.safe_load(text),
                         dict(columns=['q', 'rho'], rows=[dict(q=0.5,
                                                               rho=None)]))

    def test_schema_violations(self):
        for document in ({'columns': ['a']}, {
                'columns': ['a', 'a'],
                'rows': []
        }, {
                'columns': ['a'],
                'rows': [{
                    'b': 1
                }]
        }, {
                'columns': ['a'],
                'rows': [{
                    'a': [1]
                }]
        }):
            with self.assertRaises(DomainError):
                check_schema(document)

    def test_file(self):
        with tempfile.TemporaryDirectory() as folder:
            path = Path(folder) / 'table.csv'
            text = emit([dict(q=0.5)], ('q', ), out=path)
            self.assertEqual(path.read_text(), text)
            with self.assertRaises(OutputError):
                emit([dict(q=0.5)], ('q', ), out=Path(folder))


class _Scenario(SimpleTestCase):

    def test_precedence(self):
        spec = ScenarioSpec.from_options(CommandName.SIMULATE,
                                         dict(n=20, q=None),
                                         dict(n=10, rate=0.1, K='inf', q=0.2))
        self.assertEqual(spec.n, 20)
        self.assertEqual(spec.q, 0.2)
        self.assertIs(spec.cutoff, UNBOUNDED)
        self.assertEqual(spec.seed, conf.setting('ALOHALAB_SEED'))

    def test_grid(self):
        spec = ScenarioSpec.from_options(
            CommandName.SWEEP, {},
            dict(q_grid=dict(start=0.01, stop=1e-1, points=3, log=True)))
        self.assertEqual(len(spec.q_values()), 3)
        self.assertAlmostEqual(spec.q_values()[1], math.sqrt(1e-3))
        self.assertTrue(
            np.allclose(QGrid(0.1, 0.3, 3).values(), [0.1, 0.2, 0.3]))

    def test_rejections(self):
        with self.assertRaises(DomainError):
            ScenarioSpec.from_options(CommandName.ANALYZE, {}, dict(bogus=1))
        with self.assertRaises(DomainError):
            ScenarioSpec.from_options(CommandName.ANALYZE, {}, dict(q=2))
        with self.assertRaises(DomainError):
            ScenarioSpec.from_options(CommandName.ANALYZE, {}, {}).network()

    def test_analyze_above_one_over_e(self):
        with self.assertRaises(NoStablePointsError):
            analyze(N, 0.5, 1, 0.1)

    def test_regions_record(self):
        record = regions_record(N, RATE, UNBOUNDED)
        self.assertAlmostEqual(record['q_lower'], 0.38933, places=4)
        self.assertEqual(set(record), set(column_names(CommandName.REGIONS)))
        record = regions_record(10_000, 0.05, 4)
        self.assertIsNone(record['lambda_max_asymptotic_approx'])

    def test_outputs_clamp_probabilities(self):
        noisy = dataclasses.replace(stable_points(RATE), p_l=1 + 1e-12)
        with mock.patch('alohalab.cli.require_stable_points',
                        return_value=noisy):
            with self.assertLogs(level='WARNING'):
                record = regions_record(N, RATE, UNBOUNDED)
        self.assertEqual(record['p_l'], 1.0)

    def test_sweep_rows(self):
        spec = ScenarioSpec(CommandName.SWEEP,
                            n=10,
                            rate=0.1,
                            cutoff=1,
                            q_grid=QGrid(0.01, 0.3, 2),
                            slots=2_000,
                            warmup=200,
                            simulate=True)
        rows = sweep_rows(spec)
        self.assertEqual([r['q'] for r in rows], [0.01, 0.3])
        self.assertIn('p_hat', rows[0])
        self.assertNotEqual(rows[0]['seed'], rows[1]['seed'])


class _Commands(SimpleTestCase):

    def _call(self, *args):
        out, err = StringIO(), StringIO()
        call_command(*args, stdout=out, stderr=err)
        return out.getvalue(), err.getvalue()

    def test_analyze(self):
        out, _ = self._call('analyze', '--n', '50', '--rate', '0.3', '--K',
                            'inf', '--q', '0.4')
        header, row = out.splitlines()
        self.assertEqual(header.split(','),
                         list(column_names(CommandName.ANALYZE)))
        self.assertIn('asymptotic', row)

    def test_scenario_file(self):
        with tempfile.TemporaryDirectory() as folder:
            path = Path(folder) / 'scenario.yaml'
            path.write_text('n: 50\nrate: 0.3\nK: 1\nq: 0.02\n')
            out, _ = self._call('analyze', '--scenario', str(path),
                                '--format', 'json')
        self.assertEqual(json.loads(out)['rows'][0]['classification'],
                         'absolute')

    def test_missing_parameter(self):
        with self.assertRaises(CommandError) as context:
            self._call('regions', '--n', '50', '--rate', '0.3')
        self.assertEqual(context.exception.returncode, 2)

    def test_no_stable_points(self):
        with self.assertRaises(CommandError) as context:
            self._call('analyze', '--n', '50', '--rate', '0.5', '--K', '1',
                       '--q', '0.1')
        self.assertEqual(context.exception.returncode, 2)

    def test_bad_value(self):
        with self.assertRaises(CommandError):
            self._call('analyze', '--n', '50', '--rate', '0.3', '--K', '1',
                       '--q', '1.5')

    def test_simulate_is_reproducible(self):
        args = ('simulate', '--n', '10', '--rate', '0.1', '--K', '2', '--q',
                '0.2', '--slots', '3000', '--warmup', '300', '--seed', '9')
        self.assertEqual(self._call(*args)[0], self._call(*args)[0])

    def test_trace(self):
        out, _ = self._call('trace', '--n', '10', '--rate', '0.1', '--K',
                            'inf', '--q', '0.2', '--slots', '100', '--warmup',
                            '10', '--trace-node', '0')
        lines = out.splitlines()
        self.assertEqual(lines[0], 'slot,queue_length,departure')
        self.assertEqual(len(lines), 101)
        self.assertTrue(lines[1].startswith('10,'))

    def test_validate(self):
        out, err = self._call('validate', 'regions')
        self.assertIn('PASS regions/', err)
        self.assertNotIn('FAIL', err)
        self.assertTrue(out.startswith('suite,check,'))

    def test_validate_failure(self):
        failing = [CheckResult('s', 'c', 2.0, 1.0, 0.0, 1.5)]
        with mock.patch('alohalab.management.commands.validate.validate',
                        return_value=failing):
            with self.assertRaises(CommandError) as context:
                self._call('validate', 's')
        self.assertEqual(context.exception.returncode, 1)

    def test_list(self):
        out, _ = self._call('validate', '--list')
        self.assertIn('regions:', out)

    def test_validate_needs_suites(self):
        with self.assertRaises(CommandError) as context:
            self._call('validate')
        self.assertEqual(context.exception.returncode, 2)

    def test_validate_all(self):
        with mock.patch('alohalab.management.commands.validate.validate',
                        return_value=[]) as validate:
            self._call('validate', 'all')
        self.assertEqual(validate.call_args[0][0], list(load_catalogue()))

    def test_malformed_seed_variable(self):
        with mock.patch.dict(os.environ, {'ALOHA_LAB_SEED': 'x'}):
            with self.assertRaises(CommandError) as context:
                self._call('analyze', '--n', '50', '--rate', '0.3', '--K',
                           '1', '--q', '0.02')
        self.assertEqual(context.exception.returncode, 2)


class _Validation(SimpleTestCase):

    def test_catalogue_kinds(self):
        catalogue = load_catalogue()
        used = {c['kind'] for s in catalogue.values() for c in s['checks']}
        self.assertLessEqual(used, set(kinds()))

    def test_unknown_suite(self):
        with self.assertRaises(DomainError):
            run_suite('bogus')
        with self.assertRaises(DomainError):
            run_suites([])

    def test_analytic_suites(self):
        for name in ('regions', 'fixed_points', 'dynamics', 'saturation'):
            for result in run_suite(name):
                self.assertTrue(result.passed, result.record())

    def test_determinism_suite(self):
        for result in run_suite('determinism'):
            self.assertTrue(result.passed, result.record())

    def test_check_result(self):
        result = CheckResult('s', 'c', 2.0, 1.0, None, 3.0)
        self.assertTrue(result.passed)
        self.assertEqual(result.delta, 1.0)
        self.assertFalse(CheckResult('s', 'c', math.nan, 1.0, None,
                                     None).passed)

    def _custom(self, **check):
        catalogue = dict(custom=dict(checks=[check]))
        return run_suite('custom', catalogue=catalogue)

    def test_phase_histogram(self):
        results = self._custom(kind='phase_histogram',
                               n=10,
                               rate=0.1,
                               cases=[dict(K=1, q=[0.02])],
                               tolerance=0.2,
                               min_samples=1000,
                               slots=100_000,
                               warmup=10_000,
                               seed=5)
        self.assertEqual([r.check for r in results],
                         ['phase_histogram[K=1,q=0.02].f_0',
                          'phase_histogram[K=1,q=0.02].f_1'])
        for result in results:
            self.assertTrue(result.passed, result.record())

    def test_offered_load_report_only(self):
        results = self._custom(kind='offered_load',
                               n=10,
                               rate=0.1,
                               cases=[dict(K=4, q=[0.1], tolerance=None),
                                      dict(K=1, q=[0.1], tolerance=0.5)],
                               tolerance=0.0,
                               slots=20_000,
                               warmup=2_000,
                               seed=5)
        self.assertEqual((results[0].lower, results[0].upper), (None, None))
        self.assertTrue(results[0].passed)
        self.assertAlmostEqual(results[1].upper / results[1].expected, 1.5)

    def test_capture_takes_best_node(self):
        silence, burst = self._custom(kind='capture',
                                      n=10,
                                      rate=0.1,
                                      K='inf',
                                      q=0.3,
                                      trace_node=0,
                                      min_silence=1,
                                      min_burst=1,
                                      slots=5_000,
                                      warmup=500,
                                      seed=5)
        metrics = run(SimConfig(NetworkConfig(10, 0.1, UNBOUNDED, 0.3),
                                seed=5,
                                warmup_slots=500,
                                measure_slots=5_000,
                                trace_node=0))
        bursts = [capture_statistics(metrics, node).longest_burst
                  for node in range(10)]
        self.assertEqual(burst.measured, max(bursts))
        self.assertTrue(burst.check.startswith('capture[node='))
        self.assertTrue(silence.check.endswith('.longest_silence'))
        self.assertTrue(silence.passed and burst.passed)

    def test_success_probability_band(self):
        results = self._custom(kind='success_probability',
                               n=10,
                               rate=0.1,
                               cases=[dict(K=1, q=[0.05])],
                               tolerance=0.01,
                               throughput_tolerance=0.02,
                               slots=200_000,
                               warmup=20_000,
                               seed=5)
        band = results[0]
        self.assertAlmostEqual(band.lower, stable_points(0.1).p_l - 0.01)
        self.assertAlmostEqual(band.upper,
                               finite_population_success(10, 0.1) + 0.01)
        self.assertTrue(band.passed, band.record())

    @unittest.skipUnless(SLOW, 'simulates millions of slots')
    def test_simulated_suites(self):
        for name in ('max_throughput', 'capture', 'offered_load', 'phases',
                     'invariance', 'throughput', 'saturated_simulation'):
            for result in run_suite(name):
                self.assertTrue(result.passed, result.record())
