#pragma once

#include "dradvisor/error.hpp"
#include "dradvisor/rng.hpp"
#include "dradvisor/data.hpp"
#include "dradvisor/cart.hpp"
#include "dradvisor/ensemble.hpp"
#include "dradvisor/strategy.hpp"
#include "dradvisor/horizon.hpp"
#include "dradvisor/lp.hpp"
#include "dradvisor/mbcrt.hpp"
#include "dradvisor/testbed.hpp"
#include "dradvisor/evaluate.hpp"
