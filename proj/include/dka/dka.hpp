#pragma once

#include "errors.hpp"
#include "iteration.hpp"
#include "kernels.hpp"
#include "profile.hpp"
#include "quadrature.hpp"
#include "rates.hpp"
#include "simulate_verify.hpp"
#include "special.hpp"
#include "sphere_spectral.hpp"
