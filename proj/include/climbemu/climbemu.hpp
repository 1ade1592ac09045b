#pragma once

#include "climbemu/artifact.hpp"
#include "climbemu/csv.hpp"
#include "climbemu/ensemble.hpp"
#include "climbemu/error.hpp"
#include "climbemu/fitting.hpp"
#include "climbemu/gp.hpp"
#include "climbemu/metrics.hpp"
#include "climbemu/monotone.hpp"
#include "climbemu/parallel.hpp"
#include "climbemu/pca.hpp"
#include "climbemu/pipeline.hpp"
#include "climbemu/seed.hpp"
#include "climbemu/synthetic.hpp"
#include "climbemu/trajectory.hpp"
