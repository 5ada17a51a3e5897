#pragma once

#include "ecable/error.hpp"
#include "ecable/state_space.hpp"
#include "ecable/kinetics.hpp"
#include "ecable/transient.hpp"
#include "ecable/simulation.hpp"
#include "ecable/lifetime.hpp"
#include "ecable/qp.hpp"
#include "ecable/inference.hpp"
