#pragma once

#include "copatch/clustering.hpp"
#include "copatch/error.hpp"
#include "copatch/evaluation.hpp"
#include "copatch/fixture.hpp"
#include "copatch/pipeline.hpp"
#include "copatch/render.hpp"
#include "copatch/scoring.hpp"
#include "copatch/spatialmap.hpp"
#include "copatch/tensor.hpp"
#include "copatch/tensorio.hpp"
#include "copatch/textfusion.hpp"
#include "copatch/vecmath.hpp"
