use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{ProviderError, Turn};
use crate::store::{is_allowed_image_type, BlobRef};

/// Builds a multimodal user message in the chat-completions content-parts
/// form, embedding the image as a base64 `data:` URL.
pub fn encode_image_turn(text: &str, blob: &BlobRef, payload: &[u8]) -> Result<Value, ProviderError> {
    if !is_allowed_image_type(&blob.media_type) {
        return Err(ProviderError::UnsupportedMediaType(blob.media_type.clone()));
    }
    let url = format!("data:{};base64,{}", blob.media_type, STANDARD.encode(payload));
    Ok(json!({
        "role": "user",
        "content": [
            {"type": "text", "text": text},
            {"type": "image_url", "image_url": {"url": url}},
        ],
    }))
}

/// Wire form of any turn.
pub fn encode_turn(turn: &Turn) -> Result<Value, ProviderError> {
    match &turn.image {
        Some(image) => encode_image_turn(&turn.content, &image.blob, &image.payload),
        None => Ok(json!({"role": turn.role.as_str(), "content": turn.content})),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BlobId;

    // 1x1 transparent PNG
    const PIXEL: &[u8] = &[
        0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44,
        0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1f,
        0x15, 0xc4, 0x89, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x00,
        0x01, 0x00, 0x00, 0x05, 0x00, 0x01, 0x0d, 0x0a, 0x2d, 0xb4, 0x00, 0x00, 0x00, 0x00, 0x49,
        0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
    ];

    fn blob(media_type: &str, len: usize) -> BlobRef {
        BlobRef {
            id: BlobId::generate(),
            media_type: media_type.into(),
            byte_length: len as u64,
        }
    }

    #[test]
    fn png_turn_has_text_and_image_parts() {
        let message = encode_image_turn("what is this", &blob("image/png", PIXEL.len()), PIXEL).unwrap();
        assert_eq!(message["role"], "user");
        let parts = message["content"].as_array().unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0], json!({"type": "text", "text": "what is this"}));
        assert_eq!(parts[1]["type"], "image_url");

        let url = parts[1]["image_url"]["url"].as_str().unwrap();
        let encoded = url.strip_prefix("data:image/png;base64,").unwrap();
        assert_eq!(STANDARD.decode(encoded).unwrap(), PIXEL);
    }

    #[test]
    fn pdf_is_rejected() {
        assert_eq!(
            encode_image_turn("x", &blob("application/pdf", 1), &[0]).unwrap_err(),
            ProviderError::UnsupportedMediaType("application/pdf".into())
        );
    }
}
