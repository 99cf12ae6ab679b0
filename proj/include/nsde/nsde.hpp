#pragma once

#include "errors.hpp"
#include "numeric.hpp"
#include "mlp.hpp"
#include "sde_model.hpp"
#include "estimation.hpp"
#include "diagnostics.hpp"
#include "io.hpp"
