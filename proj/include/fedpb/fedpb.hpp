#pragma once

#include "fedpb/bnn.hpp"
#include "fedpb/config.hpp"
#include "fedpb/data.hpp"
#include "fedpb/experiment.hpp"
#include "fedpb/fed.hpp"
#include "fedpb/gibbs.hpp"
#include "fedpb/pacbayes.hpp"
#include "fedpb/report.hpp"
#include "fedpb/rng.hpp"
