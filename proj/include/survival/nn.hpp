#ifndef SURVIVAL_NN_HPP
#define SURVIVAL_NN_HPP

#include "survival/nn/autograd.hpp"
#include "survival/nn/gradcheck.hpp"
#include "survival/nn/layers.hpp"
#include "survival/nn/optim.hpp"
#include "survival/nn/tensor.hpp"

#endif
