#pragma once

#include "senselab/bounds.hpp"
#include "senselab/certify.hpp"
#include "senselab/io.hpp"
#include "senselab/objective.hpp"
#include "senselab/operator.hpp"
#include "senselab/parallel.hpp"
#include "senselab/solver.hpp"
