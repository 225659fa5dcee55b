#!/usr/bin/env python3
"""External generator process for the pedsynth `stable-diffusion-v1-4` backend.

Usage: sd_img2img.py [--model ID] [--device DEV] [--token-dir DIR] request.json

The request's "mode" selects one of:
  generate     init/prompt/strength/scale/steps/seed/latent_noise -> PNG at "output"
  train_token  images/class_word/token/steps/seed -> {"handle": ...} at "output"
  similarity   image/text -> {"similarity": cosine mapped to [0, 1]} at "output"

Learned token embeddings are stored in the token directory and loaded again
whenever a prompt mentions the token.
"""

import argparse
import json
import os
import sys
from pathlib import Path


def load_pipeline(model, device):
    import torch
    from diffusers import StableDiffusionImg2ImgPipeline

    dtype = torch.float16 if device.startswith("cuda") else torch.float32
    pipe = StableDiffusionImg2ImgPipeline.from_pretrained(model, torch_dtype=dtype, safety_checker=None)
    return pipe.to(device)


def token_file(token_dir, token):
    safe = "".join(c if c.isalnum() else "_" for c in token)
    return Path(token_dir) / f"{safe}.pt"


def load_tokens(pipe, prompt, token_dir):
    import torch

    tokenizer, encoder = pipe.tokenizer, pipe.text_encoder
    for path in sorted(Path(token_dir).glob("*.pt")) if Path(token_dir).is_dir() else []:
        saved = torch.load(path, map_location="cpu")
        token = saved["token"]
        if token not in prompt:
            continue
        if tokenizer.add_tokens(token) > 0:
            encoder.resize_token_embeddings(len(tokenizer))
        idx = tokenizer.convert_tokens_to_ids(token)
        with torch.no_grad():
            encoder.get_input_embeddings().weight[idx] = saved["embedding"].to(encoder.dtype)


def run_generate(req, args):
    import numpy as np
    import torch
    from PIL import Image

    pipe = load_pipeline(args.model, args.device)
    load_tokens(pipe, req["prompt"], args.token_dir)
    init = Image.open(req["init"]).convert("RGB")
    generator = torch.Generator(device=args.device).manual_seed(int(req["seed"]) % (2**63))

    image = init
    latent_noise = float(req.get("latent_noise", 0.0))
    if latent_noise > 0:
        # Encode, perturb in latent space, and hand latents to the img2img pipeline.
        pixels = torch.from_numpy(np.asarray(init, dtype=np.float32) / 127.5 - 1.0).permute(2, 0, 1)[None]
        pixels = pixels.to(args.device, pipe.vae.dtype)
        with torch.no_grad():
            latents = pipe.vae.encode(pixels).latent_dist.mean * pipe.vae.config.scaling_factor
        noise = torch.randn(latents.shape, generator=generator, device=args.device, dtype=latents.dtype)
        image = latents + latent_noise * noise

    out = pipe(
        prompt=req["prompt"],
        image=image,
        strength=float(req["strength"]),
        guidance_scale=float(req["scale"]),
        num_inference_steps=int(req["steps"]),
        generator=generator,
    ).images[0]
    if out.size != init.size:
        out = out.resize(init.size, Image.BILINEAR)
    out.save(req["output"])


def run_train_token(req, args):
    import torch
    import torch.nn.functional as F
    from PIL import Image

    pipe = load_pipeline(args.model, args.device)
    tokenizer, encoder, unet, vae = pipe.tokenizer, pipe.text_encoder, pipe.unet, pipe.vae
    scheduler = pipe.scheduler
    token, class_word = req["token"], req["class_word"]
    torch.manual_seed(int(req["seed"]) % (2**63))

    tokenizer.add_tokens(token)
    encoder.resize_token_embeddings(len(tokenizer))
    idx = tokenizer.convert_tokens_to_ids(token)
    init_idx = tokenizer.encode(class_word, add_special_tokens=False)[0]
    embeddings = encoder.get_input_embeddings().weight
    with torch.no_grad():
        embeddings[idx] = embeddings[init_idx].clone()
    original = embeddings.detach().clone()

    encoder.to(torch.float32).train()
    vae.requires_grad_(False)
    unet.requires_grad_(False)
    encoder.requires_grad_(False)
    encoder.get_input_embeddings().weight.requires_grad_(True)
    optimizer = torch.optim.AdamW([encoder.get_input_embeddings().weight], lr=5e-3)

    images = []
    for path in req["images"]:
        img = Image.open(path).convert("RGB").resize((512, 512), Image.BICUBIC)
        images.append(torch.tensor(list(img.getdata()), dtype=torch.float32).view(512, 512, 3).permute(2, 0, 1) / 127.5 - 1)
    batch = torch.stack(images).to(args.device, vae.dtype)
    with torch.no_grad():
        latents = vae.encode(batch).latent_dist.sample() * vae.config.scaling_factor

    ids = tokenizer(f"a photo of a {token}", padding="max_length", max_length=tokenizer.model_max_length,
                    return_tensors="pt").input_ids.to(args.device)
    keep = torch.ones(len(tokenizer), dtype=torch.bool)
    keep[idx] = False
    for _ in range(int(req["steps"])):
        pick = torch.randint(0, latents.shape[0], (1,))
        x0 = latents[pick]
        noise = torch.randn_like(x0)
        t = torch.randint(0, scheduler.config.num_train_timesteps, (1,), device=args.device)
        noisy = scheduler.add_noise(x0, noise, t)
        hidden = encoder(ids)[0].to(unet.dtype)
        pred = unet(noisy, t, hidden).sample
        loss = F.mse_loss(pred.float(), noise.float())
        loss.backward()
        optimizer.step()
        optimizer.zero_grad()
        with torch.no_grad():
            encoder.get_input_embeddings().weight[keep] = original[keep]

    Path(args.token_dir).mkdir(parents=True, exist_ok=True)
    path = token_file(args.token_dir, token)
    torch.save({"token": token, "embedding": encoder.get_input_embeddings().weight[idx].detach().cpu()}, path)
    Path(req["output"]).write_text(json.dumps({"handle": str(path)}))


def run_similarity(req, args):
    import torch
    from PIL import Image
    from transformers import CLIPModel, CLIPProcessor

    model = CLIPModel.from_pretrained(args.clip_model).to(args.device)
    processor = CLIPProcessor.from_pretrained(args.clip_model)
    inputs = processor(text=[req["text"]], images=Image.open(req["image"]).convert("RGB"), return_tensors="pt",
                       padding=True, truncation=True).to(args.device)
    with torch.no_grad():
        img = model.get_image_features(pixel_values=inputs["pixel_values"])
        txt = model.get_text_features(input_ids=inputs["input_ids"], attention_mask=inputs["attention_mask"])
    cos = torch.nn.functional.cosine_similarity(img, txt).item()
    Path(req["output"]).write_text(json.dumps({"similarity": max(0.0, min(1.0, (cos + 1) / 2))}))


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("request")
    parser.add_argument("--model", default="CompVis/stable-diffusion-v1-4")
    parser.add_argument("--clip-model", default="openai/clip-vit-large-patch14")
    parser.add_argument("--device", default=os.environ.get("PEDSYNTH_DEVICE", "cuda"))
    parser.add_argument("--token-dir", default=os.environ.get("PEDSYNTH_TOKEN_DIR",
                                                              str(Path.home() / ".cache" / "pedsynth" / "tokens")))
    args = parser.parse_args()

    req = json.loads(Path(args.request).read_text())
    handlers = {"generate": run_generate, "train_token": run_train_token, "similarity": run_similarity}
    mode = req.get("mode")
    if mode not in handlers:
        print(f"sd_img2img: unknown mode {mode!r}", file=sys.stderr)
        return 2
    try:
        handlers[mode](req, args)
    except ImportError as e:
        print(f"sd_img2img: missing dependency ({e}); install torch, diffusers and transformers", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
