#pragma once

#include "ldif/errors.hpp"
#include "ldif/numerics/autograd.hpp"
#include "ldif/numerics/gemm.hpp"
#include "ldif/numerics/grad_check.hpp"
#include "ldif/numerics/layers.hpp"
#include "ldif/numerics/ops.hpp"
#include "ldif/numerics/rng.hpp"
#include "ldif/numerics/tensor.hpp"
#include "ldif/numerics/vecmath.hpp"
#include "ldif/schedules.hpp"
#include "ldif/conditioning/class_lora.hpp"
#include "ldif/conditioning/composition_mlp.hpp"
#include "ldif/conditioning/embedder.hpp"
#include "ldif/conditioning/heads.hpp"
#include "ldif/conditioning/ledger.hpp"
#include "ldif/conditioning/lora.hpp"
#include "ldif/conditioning/similarity.hpp"
#include "ldif/conditioning/time_lora.hpp"
#include "ldif/network/attention.hpp"
#include "ldif/network/closed_form.hpp"
#include "ldif/network/model_config.hpp"
#include "ldif/network/unet.hpp"
#include "ldif/diffusion/ema.hpp"
#include "ldif/diffusion/eps_model.hpp"
#include "ldif/diffusion/objective.hpp"
#include "ldif/diffusion/samplers.hpp"
#include "ldif/harness/analysis.hpp"
#include "ldif/harness/checkpoint.hpp"
#include "ldif/harness/dataset.hpp"
#include "ldif/harness/io.hpp"
#include "ldif/harness/run_config.hpp"
#include "ldif/harness/trainer.hpp"
