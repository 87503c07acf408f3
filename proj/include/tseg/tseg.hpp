#pragma once

#include "tseg/common.hpp"
#include "tseg/tensor.hpp"
#include "tseg/ops.hpp"
#include "tseg/graph.hpp"
#include "tseg/gradcheck.hpp"
#include "tseg/nets.hpp"
#include "tseg/detection.hpp"
#include "tseg/optim.hpp"
#include "tseg/volume.hpp"
#include "tseg/phantom.hpp"
#include "tseg/roi_pipeline.hpp"
#include "tseg/postproc.hpp"
#include "tseg/metrics.hpp"
#include "tseg/pipeline.hpp"
