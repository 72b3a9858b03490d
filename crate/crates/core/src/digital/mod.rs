//! Phones, apps and phone scenes: players' digital activity, simulated
//! outside associative memory and played out in nested game masters.

mod app;
mod apps;
mod notify;
mod scene;

pub use app::{
    parse_datetime, parse_param, render_app_catalog, AppActionDescriptor, AppDescriptor, AppError,
    Args, DescriptorError, InvocationContext, ParamDescriptor, ParamType, ParamValue, Phone,
    PhoneApp, EMPTY_CATALOG,
};
pub use apps::{
    shared_calendar, CalendarApp, CalendarStore, Meeting, ModelBackedApp, NarrativeApp,
    DEFAULT_MEETING_TITLE,
};
pub use notify::{
    deliver_notifications, Notification, NotificationComponent, NotificationHub,
    NOTIFICATION_PREFIX,
};
pub use scene::{
    detect_phone_event, run_phone_scene, translate_action, AppInvocation, PhoneSceneConfig,
    PhoneSceneReport, PhoneTriggerComponent, PhoneUniverseComponent, Translation,
    APP_ACTION_QUESTION, NO_APP_OPTION, NO_SUITABLE_APP, PHONE_CALL_TO_ACTION,
    PHONE_EVENT_QUESTION, PHONE_EVENT_TEMPLATE, PHONE_STEP_CAP,
};

#[cfg(test)]
mod tests;
