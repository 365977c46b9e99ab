from copy import deepcopy
from unittest import TestCase

import numpy as np

from turba.utils import load_yaml
from turba.parameters import (
    ModelParams,
    Parameter,
    Parameters,
    default_parameter_definition,
)


class TestModelParams(TestCase):
    """Test of the ModelParams class."""

    def test_domains(self):
        """Test of the validation of every field against its domain."""
        ModelParams(kappa_e=1.0, sigma=3.0, init_b=1.0)
        for kwargs in (
            {"alpha_p": -0.1},
            {"kappa_b": 1.5},
            {"init_p": 2.0},
            {"sigma": np.inf},
            {"beta_e": np.nan},
            {"delta_b": "0.1"},
        ):
            with self.assertRaises(ValueError):
                ModelParams(**kwargs)

    def test_from_dict(self):
        """Test of the from_dict and to_dict methods."""
        params = ModelParams(alpha_p=0.2, kappa_b=0.3)
        self.assertEqual(ModelParams.from_dict(params.to_dict()), params)
        with self.assertRaises(ValueError):
            ModelParams.from_dict({"gamma": 0.1})
        self.assertEqual(len(ModelParams.names()), 12)
        np.testing.assert_array_equal(params.as_array(["kappa_b", "alpha_p"]), [0.3, 0.2])


class TestParameters(TestCase):
    """Test of the Parameters class."""

    @classmethod
    def setUp(cls):
        """Initialise the Parameters instance."""
        cls.config = load_yaml("hong_kong_reproduction.yaml")
        cls.parameters = Parameters.from_config(cls.config["parameter_definition"])

    def test_default(self):
        """Test of the default priors."""
        self.assertEqual(Parameters.default().fit_limits, self.parameters.fit_limits)
        self.assertEqual(
            self.parameters.sampled,
            [
                "alpha_p",
                "alpha_e",
                "alpha_b",
                "beta_p",
                "beta_e",
                "delta_b",
                "kappa_e",
                "kappa_b",
                "sigma",
            ],
        )
        self.assertEqual(self.parameters.pinned, {"init_p": 0.01, "init_e": 0.01, "init_b": 0.01})
        low, high = self.parameters.bounds
        self.assertEqual(high[-1], 0.05)
        self.assertTrue(np.all(low == 0))

    def test___repr__(self):
        """Test of the __repr__ and __str__ methods."""
        for p in self.parameters:
            self.assertIsInstance(repr(p), str)
        self.assertIsInstance(repr(self.parameters), str)
        self.assertIn("alpha_p", str(self.parameters))

    def test_deep_copyable(self):
        """Test of whether Parameters instance can be deepcopied."""
        self.assertEqual(deepcopy(self.parameters), self.parameters)

    def test_config_round_trip(self):
        """Test of the to_config method."""
        self.assertEqual(Parameters.from_config(self.parameters.to_config()), self.parameters)

    def test_invalid_definition(self):
        """Test of the errors of an invalid prior specification."""
        definition = default_parameter_definition()
        definition["alpha_p"] = {"fit_limits": [0.5, 0.1]}
        with self.assertRaises(ValueError):
            Parameters.from_config(definition)
        definition = default_parameter_definition()
        definition["kappa_e"] = {"fit_limits": [0.0, 2.0]}
        with self.assertRaises(ValueError):
            Parameters.from_config(definition)
        definition = default_parameter_definition()
        definition.pop("sigma")
        with self.assertRaises(ValueError):
            Parameters.from_config(definition)
        definition = default_parameter_definition()
        definition["gamma"] = {"fit_limits": [0.0, 1.0]}
        with self.assertRaises(ValueError):
            Parameters.from_config(definition)
        with self.assertRaises(ValueError):
            Parameter("init_p", fittable=False)
        with self.assertRaises(ValueError):
            Parameter("alpha_p")

    def test_zero_width_prior(self):
        """Test of a fittable parameter with a zero-width prior, which is pinned."""
        definition = default_parameter_definition()
        definition["alpha_e"] = {"fit_limits": [0.3, 0.3]}
        parameters = Parameters.from_config(definition)
        self.assertNotIn("alpha_e", parameters.sampled)
        self.assertEqual(parameters.pinned["alpha_e"], 0.3)
        self.assertIn("alpha_e", parameters.fittable)
        definition["alpha_e"] = {"fit_limits": [0.3, 0.3], "nominal_value": 0.3}
        self.assertEqual(Parameters.from_config(definition).pinned["alpha_e"], 0.3)
        # the pinned value never leaves the prior range
        definition["alpha_e"] = {"fit_limits": [0.3, 0.3], "nominal_value": 0.2}
        with self.assertRaises(ValueError):
            Parameters.from_config(definition)

    def test_call(self):
        """Test of the __call__, from_array and sample methods."""
        values = {name: 0.1 for name in self.parameters.sampled}
        params = self.parameters(**values)
        self.assertEqual(params.init_e, 0.01)
        self.assertEqual(params.alpha_b, 0.1)
        with self.assertRaises(ValueError):
            self.parameters(alpha_p=0.1)
        with self.assertRaises(ValueError):
            self.parameters(gamma=0.1, **values)
        self.assertEqual(
            self.parameters.from_array(np.full(len(self.parameters.sampled), 0.1)), params
        )
        rng = np.random.default_rng(0)
        for _ in range(10):
            draw = self.parameters.sample(rng)
            self.assertTrue(self.parameters.in_support(draw.as_array(self.parameters.sampled)))

    def test_log_density(self):
        """Test of the in_support and log_density methods."""
        inside = np.full(len(self.parameters.sampled), 0.01)
        outside = inside.copy()
        outside[0] = 0.6
        self.assertFalse(self.parameters.in_support(outside))
        self.assertEqual(self.parameters.log_density(outside), -np.inf)
        self.assertAlmostEqual(
            self.parameters.log_density(inside), -(8 * np.log(0.5) + np.log(0.05))
        )
