use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        Param {
            name: name.into(),
            grad: vec![0.0; value.len()],
            shape,
            value,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Param::new(name, shape, vec![0.0; len])
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: f64) -> Self {
        let len = shape.iter().product();
        Param::new(name, shape, vec![v; len])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Fan-in scaled uniform initialization.
pub struct ParamInit<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

impl ParamInit<'_> {
    /// He-uniform: `U(−√(6/fan_in), √(6/fan_in))`, variance `2/fan_in`.
    pub fn weight(&mut self, name: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> Param {
        let bound = (6.0 / fan_in as f64).sqrt();
        self.uniform(name, shape, bound)
    }

    /// `U(−1/√fan_in, 1/√fan_in)`.
    pub fn bias(&mut self, name: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> Param {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.uniform(name, shape, bound)
    }

    fn uniform(&mut self, name: impl Into<String>, shape: Vec<usize>, bound: f64) -> Param {
        let len = shape.iter().product();
        let value = (0..len).map(|_| self.rng.random_range(-bound..bound)).collect();
        Param::new(name, shape, value)
    }
}
