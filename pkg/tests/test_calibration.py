import os
import tempfile
import warnings
from unittest import TestCase

import numpy as np

from turba.calibration import (
    NoAcceptancesError,
    PopulationExtinctionError,
    PosteriorEnsemble,
    abc_rejection,
    abc_smc,
    distance,
    posterior_predictive,
    recovery_summary,
)
from turba.data import DailySeries, ExternalSignal
from turba.model import CollectiveBehaviourModel
from turba.network import generate_network
from turba.parameters import Parameters
from turba.simulators import observable_transform, run_simulation


def prior_definition(**overrides):
    """Priors on alpha_p and alpha_b, every other parameter pinned."""
    definition = {
        "alpha_p": {"fit_limits": [0.0, 0.5]},
        "alpha_e": {"fittable": False, "nominal_value": 0.3},
        "alpha_b": {"fit_limits": [0.0, 0.5]},
        "beta_p": {"fittable": False, "nominal_value": 0.05},
        "beta_e": {"fittable": False, "nominal_value": 0.1},
        "delta_b": {"fittable": False, "nominal_value": 0.05},
        "kappa_e": {"fittable": False, "nominal_value": 0.2},
        "kappa_b": {"fittable": False, "nominal_value": 0.3},
        "sigma": {"fittable": False, "nominal_value": 0.01},
        "init_p": {"fittable": False, "nominal_value": 0.01},
        "init_e": {"fittable": False, "nominal_value": 0.01},
        "init_b": {"fittable": False, "nominal_value": 0.01},
    }
    definition.update(overrides)
    return definition


class CalibrationTestCase(TestCase):
    """Synthetic observations of a small population."""

    @classmethod
    def setUp(cls):
        t = np.arange(30)
        cls.signal = ExternalSignal("2020-02-01", np.exp(-(((t - 10) / 5) ** 2)), "cases")
        cls.net = generate_network("watts_strogatz", 30, seed=1, k=4, beta=0.1)
        cls.prior = Parameters.from_config(prior_definition())
        cls.truth = cls.prior(alpha_p=0.25, alpha_b=0.2)
        cls.model = CollectiveBehaviourModel(cls.prior, cls.net, cls.signal)
        cls.obs = cls.model.observable(seed=1000, alpha_p=0.25, alpha_b=0.2)


class TestDistance(TestCase):
    """Test of the distance function."""

    def test_examples(self):
        """Root-mean-square differences of small series."""
        zeros = DailySeries("2020-02-01", [0, 0, 0])
        ones = DailySeries("2020-02-01", [1, 1, 1])
        self.assertEqual(distance(zeros, zeros), 0.0)
        self.assertEqual(distance(ones, zeros), 1.0)
        self.assertAlmostEqual(
            distance(DailySeries("2020-02-01", [0.5, 0.5]), DailySeries("2020-02-01", [0, 1])),
            0.5,
        )
        with self.assertRaises(ValueError):
            distance(zeros, DailySeries("2020-02-02", [0, 0, 0]))

    def test_formula(self):
        """Random fixtures against a loop-based RMSE, symmetry and the triangle inequality."""
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(1, 60))
            a, b, c = (DailySeries("2020-02-01", rng.random(n)) for _ in range(3))
            expected = (sum((x - y) ** 2 for x, y in zip(a.values, b.values)) / n) ** 0.5
            self.assertAlmostEqual(distance(a, b), expected, delta=1e-10)
            self.assertEqual(distance(a, b), distance(b, a))
            self.assertLessEqual(distance(a, c), distance(a, b) + distance(b, c) + 1e-12)


class TestRejection(CalibrationTestCase):
    """Test of the abc_rejection function."""

    def test_vacuous_threshold(self):
        """An infinite epsilon and the quantile 1 both keep every prior draw."""
        by_epsilon = abc_rejection(
            self.prior, self.obs, self.net, self.signal, 12, epsilon=np.inf, base_seed=3
        )
        by_quantile = abc_rejection(
            self.prior, self.obs, self.net, self.signal, 12, quantile=1.0, base_seed=3
        )
        self.assertEqual(len(by_epsilon), 12)
        self.assertEqual(by_epsilon.draws, by_quantile.draws)
        np.testing.assert_array_equal(by_epsilon.distances, by_quantile.distances)
        np.testing.assert_allclose(by_epsilon.weights, 1 / 12)
        self.assertEqual(by_epsilon.sampled, ["alpha_p", "alpha_b"])

    def test_quantile(self):
        """The quantile keeps the closest draws, in draw order."""
        everything = abc_rejection(
            self.prior, self.obs, self.net, self.signal, 10, quantile=1.0, base_seed=4
        )
        best = abc_rejection(
            self.prior, self.obs, self.net, self.signal, 10, quantile=0.3, base_seed=4
        )
        self.assertEqual(len(best), 3)
        closest = np.sort(np.argsort(everything.distances, kind="stable")[:3])
        self.assertEqual(best.draws, [everything.draws[i] for i in closest])
        self.assertEqual(best.final_epsilon, max(best.distances))

    def test_threads(self):
        """The number of threads does not change the posterior."""
        one = abc_rejection(
            self.prior, self.obs, self.net, self.signal, 8, quantile=0.5, base_seed=5
        )
        two = abc_rejection(
            self.prior, self.obs, self.net, self.signal, 8, quantile=0.5, base_seed=5, threads=2
        )
        self.assertEqual(one.draws, two.draws)
        np.testing.assert_array_equal(one.distances, two.distances)

    def test_no_acceptances(self):
        """A tiny epsilon raises, reporting the smallest distance."""
        with self.assertRaises(NoAcceptancesError) as context:
            abc_rejection(
                self.prior, self.obs, self.net, self.signal, 5, epsilon=1e-12, base_seed=6
            )
        self.assertGreater(context.exception.min_distance, 1e-12)
        self.assertIn("smallest distance", str(context.exception))

    def test_arguments(self):
        """Exactly one of epsilon and quantile is required."""
        for kwargs in ({}, {"epsilon": 0.1, "quantile": 0.5}, {"quantile": 0.0}, {"epsilon": 0}):
            with self.assertRaises(ValueError):
                abc_rejection(self.prior, self.obs, self.net, self.signal, 5, **kwargs)
        short = DailySeries(self.obs.start_date, self.obs.values[:-1])
        with self.assertRaises(ValueError):
            abc_rejection(self.prior, short, self.net, self.signal, 5, quantile=0.5)

    def test_truth_distance(self):
        """Without noise the generating parameters reproduce the observations exactly."""
        prior = Parameters.from_config(
            prior_definition(sigma={"fittable": False, "nominal_value": 0.0})
        )
        model = CollectiveBehaviourModel(prior, self.net, self.signal)
        obs = model.observable(seed=1, alpha_p=0.25, alpha_b=0.2)
        replay = model.observable(seed=2, alpha_p=0.25, alpha_b=0.2)
        self.assertEqual(distance(replay, obs), 0.0)


class TestSMC(CalibrationTestCase):
    """Test of the abc_smc function."""

    def test_adaptive(self):
        """The adaptive schedule never increases and bounds the final distances."""
        post = abc_smc(
            self.prior, self.obs, self.net, self.signal, 16, base_seed=7, quantile=0.5, n_stages=3
        )
        self.assertEqual(len(post), 16)
        self.assertEqual(len(post.epsilons), 3)
        self.assertTrue(all(b <= a for a, b in zip(post.epsilons[:-1], post.epsilons[1:])))
        self.assertTrue(np.all(post.distances <= post.final_epsilon))
        self.assertLessEqual(np.mean(post.distances), post.epsilons[0])
        self.assertAlmostEqual(post.weights.sum(), 1.0)
        self.assertEqual(post.method, "smc")
        self.assertTrue(all(n >= 16 for n in post.n_simulated))
        for draw in post.draws:
            self.assertTrue(self.prior.in_support(draw.as_array(post.sampled)))

    def test_schedule(self):
        """A fixed schedule is followed stage by stage."""
        post = abc_smc(
            self.prior,
            self.obs,
            self.net,
            self.signal,
            8,
            base_seed=8,
            epsilons=[1.0, 0.6],
        )
        self.assertEqual(post.epsilons, [1.0, 0.6])
        self.assertTrue(np.all(post.distances <= 0.6))
        for epsilons in ([0.5, 0.5], [0.5, 0.6], [], [-1.0]):
            with self.assertRaises(ValueError):
                abc_smc(self.prior, self.obs, self.net, self.signal, 8, epsilons=epsilons)

    def test_reproducible(self):
        """Equal seeds give equal populations, whatever the number of threads."""
        kwargs = {"base_seed": 9, "quantile": 0.5, "n_stages": 2}
        one = abc_smc(self.prior, self.obs, self.net, self.signal, 8, **kwargs)
        two = abc_smc(self.prior, self.obs, self.net, self.signal, 8, threads=2, **kwargs)
        self.assertEqual(one.draws, two.draws)
        np.testing.assert_array_equal(one.weights, two.weights)

    def test_pinned(self):
        """A zero-width prior keeps its parameter constant in every population."""
        prior = Parameters.from_config(prior_definition(alpha_e={"fit_limits": [0.3, 0.3]}))
        post = abc_smc(
            prior, self.obs, self.net, self.signal, 8, base_seed=10, quantile=0.5, n_stages=2
        )
        self.assertNotIn("alpha_e", post.sampled)
        self.assertTrue(all(d.alpha_e == 0.3 for d in post.draws))

    def test_extinction(self):
        """A stage that cannot fill its population within the budget raises."""
        with self.assertRaises(PopulationExtinctionError) as context:
            abc_smc(
                self.prior,
                self.obs,
                self.net,
                self.signal,
                4,
                base_seed=11,
                epsilons=[1e-12],
                max_simulations=8,
            )
        self.assertEqual(context.exception.stage, 0)
        self.assertEqual(context.exception.acceptance_rate, 0.0)


class TestPosterior(CalibrationTestCase):
    """Test of the PosteriorEnsemble class and the posterior predictive bands."""

    def test_csv(self):
        """Test of the write_csv and from_csv methods."""
        post = abc_rejection(
            self.prior, self.obs, self.net, self.signal, 6, quantile=0.5, base_seed=12
        )
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "posterior.csv")
            post.write_csv(path)
            loaded = PosteriorEnsemble.from_csv(path, sampled=post.sampled)
        self.assertEqual(loaded.draws, post.draws)
        np.testing.assert_array_equal(loaded.distances, post.distances)
        self.assertEqual(post.metadata()["size"], 3)
        self.assertAlmostEqual(post.effective_sample_size, 3.0)

    def test_invalid(self):
        """Test of the validation of a posterior ensemble."""
        with self.assertRaises(ValueError):
            PosteriorEnsemble([], [], [])
        with self.assertRaises(ValueError):
            PosteriorEnsemble([self.truth], [0.5], [1.0], epsilons=[0.1])
        with self.assertRaises(ValueError):
            PosteriorEnsemble([self.truth], [0.5], [0.0])

    def test_single_draw(self):
        """A single noiseless draw gives bands equal to its trajectory."""
        draw = self.truth.replace(sigma=0.0)
        post = PosteriorEnsemble([draw], [0.0], [1.0])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bands = posterior_predictive(post, self.net, self.signal, base_seed=0)
        expected = observable_transform(run_simulation(draw, self.net, self.signal, 0), "emotion")
        np.testing.assert_array_equal(bands["emotion"].lo, expected.values)
        np.testing.assert_array_equal(bands["emotion"].hi, expected.values)

    def test_envelope(self):
        """Bands over two noiseless draws stay within the envelope of their trajectories."""
        draws = [self.truth.replace(sigma=0.0), self.truth.replace(sigma=0.0, alpha_b=0.4)]
        post = PosteriorEnsemble(draws, [0.1, 0.2], [0.5, 0.5])
        members = np.array(
            [
                observable_transform(run_simulation(d, self.net, self.signal, 0), "behaviour")
                .values
                for d in draws
            ]
        )
        for uncertainty in ("both", "parameters", "noise"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                bands = posterior_predictive(
                    post, self.net, self.signal, 1, n_samples=10, uncertainty=uncertainty
                )
            self.assertTrue(np.all(bands["behaviour"].lo >= members.min(axis=0) - 1e-12))
            self.assertTrue(np.all(bands["behaviour"].hi <= members.max(axis=0) + 1e-12))
        with self.assertRaises(ValueError):
            posterior_predictive(post, self.net, self.signal, 1, uncertainty="all")

    def test_recovery_summary(self):
        """Test of the recovery_summary function."""
        post = abc_rejection(
            self.prior, self.obs, self.net, self.signal, 20, quantile=0.5, base_seed=13
        )
        summary = recovery_summary(post, self.truth, self.prior)
        self.assertEqual(set(summary), {"alpha_p", "alpha_b"})
        for name, entry in summary.items():
            self.assertLessEqual(entry["lo2.5"], entry["median"])
            self.assertLessEqual(entry["median"], entry["hi97.5"])
            self.assertEqual(entry["truth"], getattr(self.truth, name))
            self.assertTrue(0 <= entry["prior_relative_error"] <= 1)
            self.assertIsInstance(entry["covered"], bool)
