from .engine import (NonFiniteError, Parameter, ShapeError, Tensor, add, backward, concat,
                     cross_entropy, embedding_lookup, getitem, linear, log_softmax, lstm_cell,
                     masked_softmax, mean, mul, no_grad, relu, reshape, segment_sum, sigmoid,
                     softmax, sub, tanh, track_relu_margin, tsum)
from .gradcheck import grad_check, relative_error
from .optim import SGD, Adam, adam_step, make_optimizer
from .rng import derive_seed, make_rng, uniform_init
from .checkpoint import FORMAT_VERSION, load_arrays, save_arrays
