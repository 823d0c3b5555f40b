#pragma once

// Everything: fields, rendering, token bank, losses, matching, training,
// inference, metrics, synthetic scenes and file formats.

#include "maskfield/camera.hpp"
#include "maskfield/common.hpp"
#include "maskfield/compositing.hpp"
#include "maskfield/dataio.hpp"
#include "maskfield/dataset.hpp"
#include "maskfield/field.hpp"
#include "maskfield/grid_field.hpp"
#include "maskfield/inference.hpp"
#include "maskfield/losses.hpp"
#include "maskfield/matching.hpp"
#include "maskfield/metrics.hpp"
#include "maskfield/optimizer.hpp"
#include "maskfield/pipeline.hpp"
#include "maskfield/rendered_view.hpp"
#include "maskfield/splat_cloud.hpp"
#include "maskfield/synthetic.hpp"
#include "maskfield/token_bank.hpp"
#include "maskfield/trainer.hpp"
